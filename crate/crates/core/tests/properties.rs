use dotmatch::decode::decode_expectation;
use dotmatch::encode::{build_demanders_naive, build_demanders_subpixel, build_suppliers, DemanderMode};
use dotmatch::grid::clamp_keypoint;
use dotmatch::io::{format_heatmap, parse_heatmap};
use dotmatch::transport::{emd_exact, euclidean_cost, matching_loss, sinkhorn, CostMatrix, SinkhornConfig};
use dotmatch::{GridGeometry, Heatmap, Keypoint, PoseInstance};
use proptest::prelude::*;

fn geometry() -> impl Strategy<Value = GridGeometry> {
    (2usize..12, 2usize..12, prop_oneof![Just(1.0), Just(0.5), Just(2.0), Just(0.37)], prop_oneof![Just(1.0), Just(2.0), Just(4.0), Just(8.0)])
        .prop_map(|(w, h, g, r)| GridGeometry::new(w, h, g, r).unwrap())
}

fn geometry_and_keypoint() -> impl Strategy<Value = (GridGeometry, Keypoint)> {
    geometry().prop_flat_map(|g| {
        let (mx, my) = (g.max_x(), g.max_y());
        (Just(g), -2.0..mx + 2.0, -2.0..my + 2.0).prop_map(|(g, x, y)| (g, Keypoint::new(x, y)))
    })
}

/// Balanced problem with 1..8 suppliers and 1..5 demanders on [0, 5]².
fn problem() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    (1usize..8, 1usize..5).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(0.01f64..1.0, m),
            prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), n),
            prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), m),
        )
            .prop_map(|(s, d, from, to)| {
                let (ts, td): (f64, f64) = (s.iter().sum(), d.iter().sum());
                (s.iter().map(|v| v / ts).collect(), d.iter().map(|v| v / td).collect(), from, to)
            })
    })
}

fn converged(lambda: f64) -> SinkhornConfig {
    let mut cfg = SinkhornConfig::new(lambda, 200_000).unwrap();
    cfg.tolerance = Some(1e-13);
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn clamp_is_idempotent((g, kp) in geometry_and_keypoint()) {
        let once = clamp_keypoint(kp, &g);
        prop_assert_eq!(clamp_keypoint(once, &g), once);
        prop_assert!(once.x >= 0.0 && once.x <= g.max_x() && once.y >= 0.0 && once.y <= g.max_y());
    }

    #[test]
    fn pixel_centers_are_distinct(g in geometry()) {
        let centers = g.centers();
        for (i, a) in centers.iter().enumerate() {
            for b in &centers[i + 1..] {
                prop_assert!(a != b);
            }
        }
    }

    #[test]
    fn subpixel_demanders_are_a_distribution_with_the_dot_as_mean((g, kp) in geometry_and_keypoint()) {
        let d = build_demanders_subpixel(kp, &g).unwrap();
        let total: f64 = d.masses().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(d.masses().iter().all(|&m| (0.0..=1.0).contains(&m)));
        let k = clamp_keypoint(kp, &g);
        let (mx, my) = d.mean_location();
        prop_assert!((mx - k.x).abs() <= 1e-9 && (my - k.y).abs() <= 1e-9);
    }

    #[test]
    fn expectation_decode_inverts_subpixel_encoding((g, kp) in geometry_and_keypoint()) {
        let k = clamp_keypoint(kp, &g);
        let h = build_demanders_subpixel(kp, &g).unwrap().to_heatmap(&g);
        let dec = decode_expectation(&h).unwrap();
        prop_assert!((dec.x - k.x).abs() <= 1e-9 && (dec.y - k.y).abs() <= 1e-9);
    }

    #[test]
    fn demander_modes_agree_on_pixel_centers(g in geometry(), c in 0usize..12, r in 0usize..12) {
        let (c, r) = (c % g.width(), r % g.height());
        let (x, y) = g.pixel_center(c, r).unwrap();
        let sub = build_demanders_subpixel(Keypoint::new(x, y), &g).unwrap().to_heatmap(&g);
        let naive = build_demanders_naive(Keypoint::new(x, y), &g).unwrap().to_heatmap(&g);
        for (a, b) in sub.values().iter().zip(naive.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn suppliers_form_a_probability_vector(values in prop::collection::vec(-1e3f64..1e3, 64)) {
        let g = GridGeometry::unit(8, 8).unwrap();
        let s = build_suppliers(&Heatmap::new(g, values).unwrap());
        let total: f64 = s.masses().iter().sum();
        prop_assert!(s.masses().iter().all(|&m| m >= 0.0));
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn expectation_decode_ignores_positive_scale(values in prop::collection::vec(0.0f64..1.0, 36), scale in 1e-3f64..1e3) {
        let g = GridGeometry::unit(6, 6).unwrap();
        let h = Heatmap::new(g, values).unwrap();
        prop_assume!(decode_expectation(&h).is_ok());
        let a = decode_expectation(&h).unwrap();
        let b = decode_expectation(&h.scaled(scale).unwrap()).unwrap();
        prop_assert_eq!(a.window, b.window);
        prop_assert!((a.x - b.x).abs() <= 1e-12 && (a.y - b.y).abs() <= 1e-12);
    }

    #[test]
    fn heatmap_text_round_trips(values in prop::collection::vec(-1e6f64..1e6, 12)) {
        let h = Heatmap::new(GridGeometry::new(4, 3, 0.25, 1.0).unwrap(), values).unwrap();
        prop_assert_eq!(parse_heatmap(&format_heatmap(&h)).unwrap(), h);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropic_cost_bounds_exact_and_shrinks_with_lambda((s, d, from, to) in problem()) {
        let cost = euclidean_cost(&from, &to);
        let exact = emd_exact(&s, &d, &cost).unwrap().objective();
        let at10 = sinkhorn(&s, &d, &cost, &converged(10.0)).unwrap().objective();
        let at100 = sinkhorn(&s, &d, &cost, &converged(100.0)).unwrap().objective();
        prop_assert!(at10 >= exact - 1e-9);
        prop_assert!(at100 >= exact - 1e-9);
        prop_assert!(at10 - exact >= at100 - exact - 1e-9);
    }

    #[test]
    fn supplier_permutation_leaves_objective_unchanged((s, d, from, to) in problem(), shift in 0usize..8) {
        let n = s.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let s2: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
        let from2: Vec<(f64, f64)> = perm.iter().map(|&i| from[i]).collect();
        let cfg = SinkhornConfig::new(5.0, 500).unwrap();
        let a = sinkhorn(&s, &d, &euclidean_cost(&from, &to), &cfg).unwrap();
        let b = sinkhorn(&s2, &d, &euclidean_cost(&from2, &to), &cfg).unwrap();
        prop_assert!((a.objective() - b.objective()).abs() <= 1e-12);
        for (row2, &row) in perm.iter().enumerate() {
            for col in 0..d.len() {
                prop_assert!((a.get(row, col) - b.get(row2, col)).abs() <= 1e-12);
            }
        }
        let ea = emd_exact(&s, &d, &euclidean_cost(&from, &to)).unwrap().objective();
        let eb = emd_exact(&s2, &d, &euclidean_cost(&from2, &to)).unwrap().objective();
        prop_assert!((ea - eb).abs() <= 1e-12);
    }

    #[test]
    fn scaling_locations_scales_objectives((s, d, from, to) in problem(), alpha in 0.1f64..10.0) {
        let scale = |p: &[(f64, f64)]| p.iter().map(|&(x, y)| (alpha * x, alpha * y)).collect::<Vec<_>>();
        let (c1, c2) = (euclidean_cost(&from, &to), euclidean_cost(&scale(&from), &scale(&to)));
        let e1 = emd_exact(&s, &d, &c1).unwrap().objective();
        let e2 = emd_exact(&s, &d, &c2).unwrap().objective();
        prop_assert!((e2 - alpha * e1).abs() <= 1e-9);
        // The entropic plan is covariant when λ scales inversely.
        let p1 = sinkhorn(&s, &d, &c1, &SinkhornConfig::new(4.0, 300).unwrap()).unwrap().objective();
        let p2 = sinkhorn(&s, &d, &c2, &SinkhornConfig::new(4.0 / alpha, 300).unwrap()).unwrap().objective();
        prop_assert!((p2 - alpha * p1).abs() <= 1e-9 * alpha.max(1.0));
    }

    #[test]
    fn dead_pixels_get_zero_gradient(values in prop::collection::vec(-1.0f64..1.0, 16), x in 0.0f64..3.0, y in 0.0f64..3.0) {
        let g = GridGeometry::unit(4, 4).unwrap();
        prop_assume!(values.iter().any(|&v| v > 0.0));
        let inst = PoseInstance::new(vec![Keypoint::new(x, y)], vec![Heatmap::new(g, values.clone()).unwrap()]).unwrap();
        let cfg = SinkhornConfig::new(1.0, 200).unwrap();
        let report = matching_loss(&inst, DemanderMode::Subpixel, &cfg).unwrap();
        let grad = &report.gradients()[0];
        for (v, gr) in values.iter().zip(grad) {
            if *v <= 0.0 {
                prop_assert_eq!(*gr, 0.0);
            }
        }
        // The loss only sees relu(h)/‖relu(h)‖₁, so it is flat along h itself.
        let radial: f64 = values.iter().zip(grad).map(|(v, gr)| v.max(0.0) * gr).sum();
        prop_assert!(radial.abs() <= 1e-9);
    }

    #[test]
    fn exact_plan_is_feasible((s, d, from, to) in problem()) {
        let cost: CostMatrix = euclidean_cost(&from, &to);
        let plan = emd_exact(&s, &d, &cost).unwrap();
        prop_assert!(plan.marginal_residual() <= 1e-12);
        prop_assert!(plan.coupling().iter().all(|&p| p >= 0.0));
    }
}
