//! Command-line front end: one subcommand per library operation.
//!
//! Results go to stdout as JSON; bulk outputs (heatmaps, CSV traces) go to
//! `--out`. Exit status is 0 on success, 1 on domain errors and 2 on usage
//! or configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dotmatch::analysis::fig1_witness;
use dotmatch::checks::{decomposition_check, gradient_check, sinkhorn_oracle_check};
use dotmatch::decode::{decode_argmax, decode_expectation};
use dotmatch::encode::{
    build_demanders, build_dot_heatmap, build_gaussian_heatmap, DemanderMode, GaussianSpec,
    PeakConvention,
};
use dotmatch::experiments::{
    run, run_ablation, write_ablation, write_run, AblationAxis, RunConfig,
    DEFAULT_ITERATION_AXIS,
};
use dotmatch::io::{read_heatmap, read_keypoints, write_heatmap};
use dotmatch::transport::{matching_loss, mse_loss, MseTarget, SinkhornConfig};
use dotmatch::{Error, GridGeometry, Heatmap, Keypoint, PoseInstance};

#[derive(Parser, Debug)]
#[command(
    name = "dotmatch",
    version,
    about = "Keypoint heatmaps as optimal transport to sub-pixel dot annotations"
)]
struct Cli {
    /// Seed for every random draw made by the command. For train and ablate
    /// it replaces the config file's seed. [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode a keypoint as demanders, a dot heatmap or a Gaussian heatmap.
    Encode(EncodeArgs),
    /// Decode a heatmap file to coordinates.
    Decode(DecodeArgs),
    /// Evaluate a loss (and its gradient) on heatmaps against keypoints.
    Loss(LossArgs),
    /// Compare Sinkhorn with the exact solver on random problems.
    SinkhornCheck(SinkhornCheckArgs),
    /// Check the MSE risk decomposition on random batches.
    Theorem1(Theorem1Args),
    /// Search for a correctly located heatmap that MSE ranks below a displaced one.
    Fig1(Fig1Args),
    /// Train a predictor from a key = value run config.
    Train(TrainArgs),
    /// Run an ablation over demanders or Sinkhorn iteration counts.
    Ablate(AblateArgs),
    /// Compare matching-loss gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone, Copy)]
struct GridArgs {
    /// Heatmap width in pixels.
    #[arg(long, default_value_t = 8)]
    width: usize,
    /// Heatmap height in pixels.
    #[arg(long, default_value_t = 8)]
    height: usize,
    /// Pixel spacing g.
    #[arg(long, default_value_t = 1.0)]
    pixel_size: f64,
    /// Input-to-heatmap resolution ratio r.
    #[arg(long, default_value_t = 1.0)]
    image_scale: f64,
}

impl GridArgs {
    fn geometry(&self) -> Result<GridGeometry, Error> {
        GridGeometry::new(self.width, self.height, self.pixel_size, self.image_scale)
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct SinkhornArgs {
    /// Inverse entropic temperature.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Sinkhorn iterations.
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Stop early once the marginal residual falls below this value.
    #[arg(long)]
    tolerance: Option<f64>,
}

impl SinkhornArgs {
    fn config(&self) -> Result<SinkhornConfig, Error> {
        let mut cfg = SinkhornConfig::new(self.lambda, self.iterations)?;
        cfg.tolerance = self.tolerance;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct GaussianArgs {
    /// Gaussian standard deviation.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Where the Gaussian is centered.
    #[arg(long, value_enum, default_value_t = ConventionArg::PeakOne)]
    convention: ConventionArg,
}

impl GaussianArgs {
    fn spec(&self) -> Result<GaussianSpec, Error> {
        GaussianSpec::new(self.sigma, self.convention.into())
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ConventionArg {
    PeakOne,
    SubpixelCentered,
}

impl From<ConventionArg> for PeakConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::PeakOne => PeakConvention::PeakOne,
            ConventionArg::SubpixelCentered => PeakConvention::SubpixelCentered,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DemanderArg {
    Subpixel,
    Naive,
}

impl From<DemanderArg> for DemanderMode {
    fn from(d: DemanderArg) -> Self {
        match d {
            DemanderArg::Subpixel => DemanderMode::Subpixel,
            DemanderArg::Naive => DemanderMode::Naive,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum TargetArg {
    Demanders,
    Dot,
    Gaussian,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    /// Keypoint x in heatmap coordinates.
    #[arg(long)]
    x: f64,
    /// Keypoint y in heatmap coordinates.
    #[arg(long)]
    y: f64,
    #[command(flatten)]
    grid: GridArgs,
    /// What to encode.
    #[arg(long, value_enum, default_value_t = TargetArg::Demanders)]
    target: TargetArg,
    /// Demander formulation (for --target demanders).
    #[arg(long, value_enum, default_value_t = DemanderArg::Subpixel)]
    demanders: DemanderArg,
    #[command(flatten)]
    gaussian: GaussianArgs,
    /// Also write the encoded heatmap to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DecoderArg {
    Expectation,
    Argmax,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// Heatmap file (`H W g` header, then H rows of W values).
    #[arg(long)]
    heatmap: PathBuf,
    #[arg(long, value_enum, default_value_t = DecoderArg::Expectation)]
    decoder: DecoderArg,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum LossArg {
    Matching,
    MseGaussian,
    MseDot,
}

#[derive(Args, Debug)]
struct LossArgs {
    /// One heatmap file per joint, in keypoint order.
    #[arg(long, required = true, num_args = 1..)]
    heatmap: Vec<PathBuf>,
    /// JSON array of {"x", "y", "visible"} keypoints.
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long, value_enum, default_value_t = LossArg::Matching)]
    loss: LossArg,
    #[arg(long, value_enum, default_value_t = DemanderArg::Subpixel)]
    demanders: DemanderArg,
    #[command(flatten)]
    sinkhorn: SinkhornArgs,
    #[command(flatten)]
    gaussian: GaussianArgs,
    /// Directory for per-joint gradient heatmaps (grad_<j>.txt).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SinkhornCheckArgs {
    /// Suppliers per problem (0 draws from 2..=64 per trial).
    #[arg(long, default_value_t = 6)]
    n: usize,
    /// Demanders per problem.
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Inverse entropic temperature.
    #[arg(long, default_value_t = 100.0)]
    lambda: f64,
    /// Iteration cap.
    #[arg(long, default_value_t = 100_000)]
    iterations: usize,
    /// Early-stop threshold on the marginal residual.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct Theorem1Args {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Samples per batch.
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[command(flatten)]
    gaussian: GaussianArgs,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Debug)]
struct Fig1Args {
    #[command(flatten)]
    gaussian: GaussianArgs,
    /// Grid side length.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Keypoint x (defaults to near the grid center).
    #[arg(long)]
    x: Option<f64>,
    /// Keypoint y (defaults to near the grid center).
    #[arg(long)]
    y: Option<f64>,
    /// Directory for the two witness heatmaps.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run config file of key = value lines.
    #[arg(long)]
    config: PathBuf,
    /// Directory for trace.csv, errors.csv, metrics.json and config_echo.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum AxisArg {
    Demanders,
    Iterations,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Run config file of key = value lines (loss must be matching).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Iteration counts for --axis iterations.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ITERATION_AXIS)]
    values: Vec<usize>,
    /// Directory for ablation.csv and one run directory per value.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, value_enum, default_value_t = DemanderArg::Subpixel)]
    demanders: DemanderArg,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    sinkhorn: SinkhornArgs,
}

/// Usage and configuration problems exit with 2; everything else with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::InvalidConfig(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("json values serialize"));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Loss(a) => loss(a),
        Command::SinkhornCheck(a) => {
            let sinkhorn = SinkhornArgs {
                lambda: a.lambda,
                iterations: a.iterations,
                tolerance: Some(a.tolerance),
            };
            let r = sinkhorn_oracle_check(a.n, a.m, &sinkhorn.config()?, a.trials, seed)?;
            print_json(&serde_json::to_value(r)?);
            Ok(())
        }
        Command::Theorem1(a) => {
            let r = decomposition_check(&a.grid.geometry()?, &a.gaussian.spec()?, a.trials, a.batch, seed)?;
            print_json(&serde_json::to_value(r)?);
            Ok(())
        }
        Command::Fig1(a) => fig1(a),
        Command::Train(a) => train(a, cli.seed),
        Command::Ablate(a) => ablate(a, cli.seed),
        Command::Gradcheck(a) => {
            let r = gradient_check(
                &a.grid.geometry()?,
                a.demanders.into(),
                &a.sinkhorn.config()?,
                a.trials,
                a.step,
                seed,
            )?;
            print_json(&serde_json::to_value(r)?);
            Ok(())
        }
    }
}

fn encode(a: EncodeArgs) -> Result<(), Error> {
    let geom = a.grid.geometry()?;
    let kp = Keypoint::new(a.x, a.y);
    let (heatmap, value) = match a.target {
        TargetArg::Demanders => {
            let d = build_demanders(kp, &geom, a.demanders.into())?;
            let entries: Vec<_> = d
                .pixels()
                .iter()
                .zip(d.locations())
                .zip(d.masses())
                .map(|((&(col, row), &(x, y)), &mass)| json!({"col": col, "row": row, "x": x, "y": y, "mass": mass}))
                .collect();
            let (mx, my) = d.mean_location();
            (d.to_heatmap(&geom), json!({"demanders": entries, "mean": {"x": mx, "y": my}}))
        }
        TargetArg::Dot => {
            let h = build_dot_heatmap(kp, &geom)?;
            let v = json!({"values": h.values()});
            (h, v)
        }
        TargetArg::Gaussian => {
            let h = build_gaussian_heatmap(kp, &geom, &a.gaussian.spec()?)?;
            let v = json!({"values": h.values()});
            (h, v)
        }
    };
    if let Some(path) = &a.out {
        write_heatmap(path, &heatmap)?;
    }
    print_json(&value);
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<(), Error> {
    let h = read_heatmap(&a.heatmap)?;
    let (x, y) = match a.decoder {
        DecoderArg::Expectation => {
            let d = decode_expectation(&h)?;
            (d.x, d.y)
        }
        DecoderArg::Argmax => decode_argmax(&h),
    };
    print_json(&json!({"x": x, "y": y}));
    Ok(())
}

fn loss(a: LossArgs) -> Result<(), Error> {
    let heatmaps = a.heatmap.iter().map(read_heatmap).collect::<Result<Vec<Heatmap>, _>>()?;
    let keypoints = read_keypoints(&a.keypoints)?;
    let instance = PoseInstance::new(keypoints, heatmaps)?;
    let report = match a.loss {
        LossArg::Matching => matching_loss(&instance, a.demanders.into(), &a.sinkhorn.config()?)?,
        LossArg::MseGaussian => mse_loss(&instance, MseTarget::Gaussian(a.gaussian.spec()?))?,
        LossArg::MseDot => mse_loss(&instance, MseTarget::Dot)?,
    };
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        for (j, (g, h)) in report.gradients().iter().zip(instance.heatmaps()).enumerate() {
            write_heatmap(dir.join(format!("grad_{j}.txt")), &Heatmap::new(*h.geometry(), g.clone())?)?;
        }
    }
    print_json(&serde_json::to_value(&report)?);
    Ok(())
}

fn fig1(a: Fig1Args) -> Result<(), Error> {
    let geom = GridGeometry::unit(a.size, a.size)?;
    let c = (a.size as f64 - 1.0) / 2.0;
    let kp = Keypoint::new(a.x.unwrap_or(c + 0.3), a.y.unwrap_or(c - 0.2));
    let w = fig1_witness(&geom, kp, &a.gaussian.spec()?)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        write_heatmap(dir.join("heatmap_1.txt"), &w.located)?;
        write_heatmap(dir.join("heatmap_2.txt"), &w.offset)?;
    }
    print_json(&serde_json::to_value(&w)?);
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<(), Error> {
    let cfg = load_config(&a.config, seed)?;
    let result = run(&cfg)?;
    if let Some(dir) = &a.out {
        write_run(dir, &result)?;
    }
    print_json(&json!({
        "loss": result.loss,
        "primary_decoder": result.primary_decoder,
        "final_loss": result.final_loss,
        "mean_error": result.final_metrics.mean_error,
        "secondary_mean_error": result.secondary_metrics.mean_error,
        "inconsistency_rate": result.trace.inconsistency_rate,
        "recorded_steps": result.rows.len(),
    }));
    Ok(())
}

fn ablate(a: AblateArgs, seed: Option<u64>) -> Result<(), Error> {
    let cfg = load_config(&a.config, seed)?;
    let axis = match a.axis {
        AxisArg::Demanders => AblationAxis::DemanderMode,
        AxisArg::Iterations => AblationAxis::SinkhornIterations(a.values),
    };
    let entries = run_ablation(&axis, &cfg)?;
    if let Some(dir) = &a.out {
        write_ablation(dir, &entries)?;
    }
    let rows: Vec<_> = entries
        .iter()
        .map(|e| {
            json!({
                "label": e.label,
                "mean_error": e.result.final_metrics.mean_error,
                "final_loss": e.result.final_loss,
                "inconsistency_rate": e.result.trace.inconsistency_rate,
            })
        })
        .collect();
    print_json(&json!({ "runs": rows }));
    Ok(())
}
