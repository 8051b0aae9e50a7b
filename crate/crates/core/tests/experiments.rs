use dotmatch::encode::{DemanderMode, GaussianSpec};
use dotmatch::experiments::{
    errors_csv, generate_dataset, generate_sample, run, run_ablation, run_on, trace_csv, train, write_run,
    AblationAxis, LossSpec, PredictorMode, PredictorSpec, RunConfig, SyntheticSample,
};
use dotmatch::transport::SinkhornConfig;
use dotmatch::{Error, GridGeometry, Keypoint};

fn matching(lambda: f64, demanders: DemanderMode) -> LossSpec {
    LossSpec::Matching {
        demanders,
        sinkhorn: SinkhornConfig::new(lambda, 300).unwrap(),
    }
}

fn with_joint(sample: &SyntheticSample, x: f64, y: f64) -> SyntheticSample {
    SyntheticSample {
        gt_joints: vec![Keypoint::new(x, y)],
        ..sample.clone()
    }
}

fn small_config(loss: &str) -> RunConfig {
    RunConfig::parse(&format!(
        "mode = small_model\nwidth = 8\nloss = {loss}\nlambda = 10\niterations = 200\nlr = 0.1\nsteps = 6\nseed = 4\nn = 6\nK = 2\nH = 6\nW = 6\nr = 2\n"
    ))
    .unwrap()
}

#[test]
fn identical_configs_give_identical_traces() {
    for loss in ["matching", "mse_gaussian"] {
        let cfg = small_config(loss);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(trace_csv(&a).unwrap(), trace_csv(&b).unwrap());
        assert_eq!(errors_csv(&a).unwrap(), errors_csv(&b).unwrap());
        assert_eq!(a.rows.len(), 7);
    }
}

#[test]
fn zero_learning_rate_gives_a_constant_trace() {
    let mut cfg = small_config("matching");
    cfg.predictor.learning_rate = 0.0;
    let r = run(&cfg).unwrap();
    assert!(r.rows.windows(2).all(|w| w[0].loss == w[1].loss && w[0].error_expectation == w[1].error_expectation));
    assert_eq!(r.trace.inconsistency_rate, 0.0);
}

#[test]
fn mse_dot_converges_to_the_dot_heatmap() {
    let geom = GridGeometry::unit(6, 6).unwrap();
    let data = generate_dataset(3, &geom, 2, 8).unwrap();
    let spec = PredictorSpec {
        learning_rate: 0.25,
        steps: 200,
        ..PredictorSpec::default()
    };
    let r = train(&data, &spec, &LossSpec::MseDot).unwrap();
    assert!(r.final_loss < 1e-12);
    for (sample, heatmaps) in data.iter().zip(&r.final_heatmaps) {
        for (kp, h) in sample.gt_joints.iter().zip(heatmaps) {
            let dot = dotmatch::encode::build_dot_heatmap(*kp, &geom).unwrap();
            assert!(h.squared_distance(&dot) < 1e-12);
        }
    }
    // Argmax lands on the containing pixel, so its error is the quantization offset.
    for e in r.instance_errors.iter().filter(|e| e.decoder == dotmatch::decode::Decoder::Argmax) {
        let kp = data[e.instance_id].gt_joints[e.joint];
        let (c, row) = geom.containing_pixel(kp.x, kp.y);
        let (cx, cy) = geom.pixel_center(c, row).unwrap();
        assert!((e.err - kp.distance(cx, cy)).abs() < 1e-12);
    }
}

#[test]
fn safeguarded_matching_never_raises_the_loss() {
    let geom = GridGeometry::unit(6, 6).unwrap();
    let data = generate_dataset(4, &geom, 1, 2).unwrap();
    let spec = PredictorSpec {
        learning_rate: 50.0,
        steps: 40,
        safeguarded: true,
        ..PredictorSpec::default()
    };
    let r = train(&data, &spec, &matching(10.0, DemanderMode::Subpixel)).unwrap();
    assert!(r.rows.windows(2).all(|w| w[1].loss <= w[0].loss));
    assert!(r.final_loss < r.rows[0].loss);
}

#[test]
fn naive_demanders_cannot_beat_the_quantization_floor() {
    let geom = GridGeometry::unit(8, 8).unwrap();
    let base = generate_sample(&geom, 1, 0).unwrap();
    let data: Vec<_> = [(2.5, 3.5), (4.5, 1.5), (5.5, 5.5)]
        .iter()
        .map(|&(x, y)| with_joint(&base, x, y))
        .collect();
    let spec = PredictorSpec {
        steps: 300,
        ..PredictorSpec::default()
    };
    // The converged naive heatmap sits on the containing pixel center.
    let floor = 0.5f64.hypot(0.5);
    let naive = train(&data, &spec, &matching(10.0, DemanderMode::Naive)).unwrap();
    let sub = train(&data, &spec, &matching(10.0, DemanderMode::Subpixel)).unwrap();
    assert!(naive.final_metrics.mean_error >= floor - 1e-6, "{}", naive.final_metrics.mean_error);
    assert!(sub.final_metrics.mean_error < 0.1, "{}", sub.final_metrics.mean_error);
}

#[test]
fn single_value_ablation_matches_plain_training() {
    let cfg = small_config("matching");
    let LossSpec::Matching { sinkhorn, .. } = cfg.loss else { unreachable!() };
    let entries = run_ablation(&AblationAxis::SinkhornIterations(vec![sinkhorn.iterations]), &cfg).unwrap();
    assert_eq!(entries.len(), 1);
    let plain = run(&cfg).unwrap();
    assert_eq!(trace_csv(&entries[0].result).unwrap(), trace_csv(&plain).unwrap());
}

#[test]
fn ablations_require_the_matching_loss() {
    let cfg = small_config("mse_dot");
    assert!(matches!(run_ablation(&AblationAxis::DemanderMode, &cfg), Err(Error::Config(_))));
    let cfg = small_config("matching");
    assert!(run_ablation(&AblationAxis::SinkhornIterations(vec![]), &cfg).is_err());
}

#[test]
fn demander_ablation_runs_both_modes_on_shared_data() {
    let mut cfg = small_config("matching");
    cfg.predictor.mode = PredictorMode::DirectLogits;
    let entries = run_ablation(&AblationAxis::DemanderMode, &cfg).unwrap();
    let labels: Vec<_> = entries.iter().map(|e| e.label.as_str()).collect();
    assert_eq!(labels, ["subpixel", "naive"]);
    // Step 0 sees the same data and initialization in both runs.
    assert_eq!(entries[0].result.rows[0].error_argmax, entries[1].result.rows[0].error_argmax);
}

#[test]
fn run_directory_has_every_output() {
    let cfg = small_config("mse_gaussian");
    let data = generate_dataset(cfg.n, &cfg.geometry, cfg.joints, cfg.seed).unwrap();
    let r = run_on(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &r).unwrap();
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,loss,error_expectation,error_argmax\n"));
    assert_eq!(trace.lines().count(), r.rows.len() + 1);
    let errors = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert!(errors.starts_with("instance_id,joint,err,decoder\n"));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["loss"], "mse_gaussian");
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("config_echo.json")).unwrap()).unwrap();
    assert_eq!(echo["n"], 6);
    assert_eq!(echo["loss"]["mse_gaussian"]["sigma"], GaussianSpec::default().sigma);
}

#[test]
fn divergence_is_reported_with_its_step() {
    let geom = GridGeometry::unit(4, 4).unwrap();
    let data = generate_dataset(1, &geom, 1, 0).unwrap();
    let spec = PredictorSpec {
        learning_rate: 1e300,
        steps: 5,
        ..PredictorSpec::default()
    };
    match train(&data, &spec, &LossSpec::MseGaussian(GaussianSpec::default())) {
        Err(Error::Divergence { step }) => assert!(step >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}
