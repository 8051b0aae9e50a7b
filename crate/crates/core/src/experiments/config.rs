use std::path::Path;

use serde::Serialize;

use super::model::{PredictorMode, PredictorSpec};
use super::train::LossSpec;
use crate::encode::{DemanderMode, GaussianSpec, PeakConvention};
use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::transport::{GradientMode, SinkhornConfig};

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunConfig {
    pub predictor: PredictorSpec,
    pub loss: LossSpec,
    pub seed: u64,
    pub n: usize,
    pub joints: usize,
    pub geometry: GridGeometry,
}

/// Keys accepted by [`RunConfig::parse`].
pub const CONFIG_KEYS: &[&str] = &[
    "mode", "loss", "lambda", "iterations", "sigma", "lr", "steps", "seed", "n", "K", "H", "W", "r",
    "g", "demanders", "width", "init_scale", "safeguard", "record_every", "tolerance", "convention",
    "log_domain", "gradient",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            predictor: PredictorSpec::default(),
            loss: LossSpec::Matching {
                demanders: DemanderMode::Subpixel,
                sinkhorn: SinkhornConfig::default(),
            },
            seed: 0,
            n: 1,
            joints: 1,
            geometry: GridGeometry::unit(8, 8).expect("8x8 is valid"),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for key {key}"))),
    }
}

impl RunConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are ignored;
    /// missing keys keep their defaults; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !CONFIG_KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", lineno + 1)));
            }
            if pairs.iter().any(|(p, _)| p == k) {
                return Err(Error::Config(format!("line {}: repeated key {k:?}", lineno + 1)));
            }
            pairs.push((k.to_string(), v.to_string()));
        }
        Self::from_pairs(&pairs)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let base = RunConfig::default();
        let mut predictor = base.predictor;
        if let Some(v) = get("mode") {
            predictor.mode = match v {
                "direct_logits" => PredictorMode::DirectLogits,
                "small_model" => PredictorMode::SmallModel,
                _ => return Err(Error::Config(format!("unknown mode {v:?}"))),
            };
        }
        macro_rules! set {
            ($target:expr, $key:literal) => {
                if let Some(v) = get($key) {
                    $target = parse_value($key, v)?;
                }
            };
        }
        set!(predictor.model_width, "width");
        set!(predictor.init_scale, "init_scale");
        set!(predictor.learning_rate, "lr");
        set!(predictor.steps, "steps");
        set!(predictor.record_every, "record_every");
        if let Some(v) = get("safeguard") {
            predictor.safeguarded = parse_bool("safeguard", v)?;
        }

        let mut sinkhorn = SinkhornConfig::default();
        set!(sinkhorn.lambda, "lambda");
        set!(sinkhorn.iterations, "iterations");
        if let Some(v) = get("tolerance") {
            sinkhorn.tolerance = Some(parse_value("tolerance", v)?);
        }
        if let Some(v) = get("log_domain") {
            sinkhorn.log_domain = parse_bool("log_domain", v)?;
        }
        if let Some(v) = get("gradient") {
            sinkhorn.gradient = match v {
                "unrolled" => GradientMode::Unrolled,
                "implicit" => GradientMode::Implicit,
                _ => return Err(Error::Config(format!("unknown gradient mode {v:?}"))),
            };
        }
        let mut gaussian = GaussianSpec::default();
        set!(gaussian.sigma, "sigma");
        if let Some(v) = get("convention") {
            gaussian.convention = parse_convention(v)?;
        }
        let mut demanders = DemanderMode::Subpixel;
        if let Some(v) = get("demanders") {
            demanders = match v {
                "subpixel" => DemanderMode::Subpixel,
                "naive" => DemanderMode::Naive,
                _ => return Err(Error::Config(format!("unknown demander mode {v:?}"))),
            };
        }
        let loss = match get("loss").unwrap_or("matching") {
            "matching" => LossSpec::Matching { demanders, sinkhorn },
            "matching_naive" => LossSpec::Matching {
                demanders: DemanderMode::Naive,
                sinkhorn,
            },
            "mse_gaussian" => LossSpec::MseGaussian(GaussianSpec::new(gaussian.sigma, gaussian.convention)?),
            "mse_dot" => LossSpec::MseDot,
            v => return Err(Error::Config(format!("unknown loss {v:?}"))),
        };

        let mut seed = base.seed;
        let mut n = base.n;
        let mut joints = base.joints;
        let (mut w, mut h, mut g, mut r) = (8usize, 8usize, 1.0f64, 1.0f64);
        set!(seed, "seed");
        set!(n, "n");
        set!(joints, "K");
        set!(w, "W");
        set!(h, "H");
        set!(g, "g");
        set!(r, "r");
        predictor.seed = init_seed(seed);
        let cfg = RunConfig {
            predictor,
            loss,
            seed,
            n,
            joints,
            geometry: GridGeometry::new(w, h, g, r)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.predictor.validate()?;
        if let LossSpec::Matching { sinkhorn, .. } = &self.loss {
            sinkhorn.validate()?;
        }
        if self.n == 0 || self.joints == 0 {
            return Err(Error::Config("n and K must be positive".into()));
        }
        Ok(())
    }

    /// Same config with a new run seed (data and initialization).
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = *self;
        cfg.seed = seed;
        cfg.predictor.seed = init_seed(seed);
        cfg
    }

    /// Canonical `key = value` text; parsing it yields `self` again.
    pub fn to_config_string(&self) -> String {
        let p = &self.predictor;
        let g = &self.geometry;
        let mode = match p.mode {
            PredictorMode::DirectLogits => "direct_logits",
            PredictorMode::SmallModel => "small_model",
        };
        let mut lines = vec![
            format!("mode = {mode}"),
            format!("loss = {}", self.loss.name()),
        ];
        match &self.loss {
            LossSpec::Matching { sinkhorn, .. } => {
                lines.push(format!("lambda = {}", sinkhorn.lambda));
                lines.push(format!("iterations = {}", sinkhorn.iterations));
                if let Some(t) = sinkhorn.tolerance {
                    lines.push(format!("tolerance = {t}"));
                }
                lines.push(format!("log_domain = {}", sinkhorn.log_domain));
                let grad = match sinkhorn.gradient {
                    GradientMode::Unrolled => "unrolled",
                    GradientMode::Implicit => "implicit",
                };
                lines.push(format!("gradient = {grad}"));
            }
            LossSpec::MseGaussian(spec) => {
                lines.push(format!("sigma = {}", spec.sigma));
                lines.push(format!("convention = {}", convention_name(spec.convention)));
            }
            LossSpec::MseDot => {}
        }
        lines.extend([
            format!("lr = {}", p.learning_rate),
            format!("steps = {}", p.steps),
            format!("width = {}", p.model_width),
            format!("init_scale = {}", p.init_scale),
            format!("safeguard = {}", p.safeguarded),
            format!("record_every = {}", p.record_every),
            format!("seed = {}", self.seed),
            format!("n = {}", self.n),
            format!("K = {}", self.joints),
            format!("H = {}", g.height()),
            format!("W = {}", g.width()),
            format!("g = {}", g.pixel_size()),
            format!("r = {}", g.image_scale()),
        ]);
        lines.join("\n") + "\n"
    }
}

/// Parameter-initialization seed derived from the run seed, so that data and
/// weights come from unrelated streams.
pub fn init_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

pub fn parse_convention(v: &str) -> Result<PeakConvention> {
    match v {
        "peak-one" | "peak_one" => Ok(PeakConvention::PeakOne),
        "subpixel-centered" | "subpixel_centered" => Ok(PeakConvention::SubpixelCentered),
        _ => Err(Error::Config(format!("unknown peak convention {v:?}"))),
    }
}

pub fn convention_name(c: PeakConvention) -> &'static str {
    match c {
        PeakConvention::PeakOne => "peak-one",
        PeakConvention::SubpixelCentered => "subpixel-centered",
    }
}
