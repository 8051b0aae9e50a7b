use serde::Serialize;

use super::config::RunConfig;
use super::data::{generate_dataset, SyntheticSample};
use super::train::{train, LossSpec, RunResult};
use crate::encode::DemanderMode;
use crate::error::{Error, Result};

/// Sinkhorn iteration counts compared by default.
pub const DEFAULT_ITERATION_AXIS: [usize; 3] = [500, 1000, 1500];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Sub-pixel then naive demanders.
    DemanderMode,
    SinkhornIterations(Vec<usize>),
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationEntry {
    pub label: String,
    pub config: RunConfig,
    pub result: RunResult,
}

/// One run per axis value on shared data and seeds. The base config must use
/// the matching loss.
pub fn run_ablation(axis: &AblationAxis, base: &RunConfig) -> Result<Vec<AblationEntry>> {
    let configs = axis_configs(axis, base)?;
    let data = generate_dataset(base.n, &base.geometry, base.joints, base.seed)?;
    configs
        .into_iter()
        .map(|(label, cfg)| {
            let result = run_on(&data, &cfg)?;
            Ok(AblationEntry {
                label,
                config: cfg,
                result,
            })
        })
        .collect()
}

fn axis_configs(axis: &AblationAxis, base: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    let LossSpec::Matching { demanders, sinkhorn } = base.loss else {
        return Err(Error::Config("ablations vary the matching loss; set loss = matching".into()));
    };
    let with = |loss| RunConfig { loss, ..*base };
    match axis {
        AblationAxis::DemanderMode => Ok([DemanderMode::Subpixel, DemanderMode::Naive]
            .into_iter()
            .map(|d| {
                let label = match d {
                    DemanderMode::Subpixel => "subpixel",
                    DemanderMode::Naive => "naive",
                };
                (label.to_string(), with(LossSpec::Matching { demanders: d, sinkhorn }))
            })
            .collect()),
        AblationAxis::SinkhornIterations(values) => {
            if values.is_empty() {
                return Err(Error::Config("iteration axis is empty".into()));
            }
            Ok(values
                .iter()
                .map(|&it| {
                    let mut s = sinkhorn;
                    s.iterations = it;
                    (format!("iterations={it}"), with(LossSpec::Matching { demanders, sinkhorn: s }))
                })
                .collect())
        }
    }
}

/// Trains on pre-generated data and echoes the full config.
pub fn run_on(data: &[SyntheticSample], cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let mut result = train(data, &cfg.predictor, &cfg.loss)?;
    result.config_echo = serde_json::to_value(cfg)?;
    Ok(result)
}

/// Generates the configured dataset and trains on it.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let data = generate_dataset(cfg.n, &cfg.geometry, cfg.joints, cfg.seed)?;
    run_on(&data, cfg)
}
