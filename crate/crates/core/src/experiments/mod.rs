//! Synthetic keypoint data, trainable predictors, gradient-descent training
//! under each loss, and ablation runs.

mod ablation;
mod config;
mod data;
mod model;
mod output;
mod train;

pub use ablation::{run, run_ablation, run_on, AblationAxis, AblationEntry, DEFAULT_ITERATION_AXIS};
pub use config::{convention_name, init_seed, parse_convention, RunConfig, CONFIG_KEYS};
pub use data::{generate_dataset, generate_sample, SyntheticSample, DISC_RADIUS, NOISE_STD};
pub use model::{PredictorMode, PredictorSpec};
pub use output::{ablation_csv, errors_csv, trace_csv, write_ablation, write_run};
pub use train::{train, InstanceError, LossSpec, RunResult, TraceRow};
