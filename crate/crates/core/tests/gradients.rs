use rand::Rng;

use dotmatch::encode::DemanderMode;
use dotmatch::grid::seeded_rng;
use dotmatch::transport::{matching_loss, GradientMode, SinkhornConfig};
use dotmatch::{GridGeometry, Heatmap, Keypoint, PoseInstance};

/// Once Sinkhorn has converged, backpropagating through the iterations and
/// differentiating the fixed point give the same heatmap gradient.
#[test]
fn unrolled_and_implicit_gradients_agree_at_convergence() {
    let geom = GridGeometry::unit(8, 8).unwrap();
    let mut rng = seeded_rng(11);
    for lambda in [1.0, 10.0] {
        let mut unrolled = SinkhornConfig::new(lambda, 20_000).unwrap();
        unrolled.tolerance = Some(1e-13);
        let implicit = SinkhornConfig {
            gradient: GradientMode::Implicit,
            ..unrolled
        };
        for _ in 0..10 {
            let kp = Keypoint::new(rng.gen::<f64>() * 7.0, rng.gen::<f64>() * 7.0);
            let h = Heatmap::from_fn(geom, |_, _| rng.gen::<f64>() * 1.5 - 0.5).unwrap();
            let inst = PoseInstance::new(vec![kp], vec![h]).unwrap();
            let a = matching_loss(&inst, DemanderMode::Subpixel, &unrolled).unwrap();
            let b = matching_loss(&inst, DemanderMode::Subpixel, &implicit).unwrap();
            assert!((a.total() - b.total()).abs() < 1e-15);
            let scale = a.gradients()[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (u, v) in a.gradients()[0].iter().zip(&b.gradients()[0]) {
                assert!((u - v).abs() <= 1e-6 * scale, "lambda {lambda}: {u} vs {v}");
            }
        }
    }
}
