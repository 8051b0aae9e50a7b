use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel index ({col}, {row}) outside {width}x{height} grid")]
    IndexOutOfRange {
        col: usize,
        row: usize,
        width: usize,
        height: usize,
    },

    #[error("invalid grid geometry: {0}")]
    InvalidGeometry(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("joint is not visible and must be masked")]
    InvisibleJoint,

    #[error("unbalanced marginals: supply {supply} vs demand {demand}")]
    Unbalanced { supply: f64, demand: f64 },

    #[error("invalid transport input: {0}")]
    InvalidTransport(String),

    #[error("numeric overflow in scaling-domain Sinkhorn ({0}); enable log_domain")]
    NumericOverflow(String),

    #[error("invalid Sinkhorn configuration: {0}")]
    InvalidConfig(String),

    #[error("every joint is masked (invisible or degenerate); loss is empty")]
    EmptyLoss,

    #[error("heatmap has no positive 2x2 window; cannot decode")]
    DegenerateDecode,

    #[error("no visible ground-truth joints to evaluate")]
    EmptyEvaluation,

    #[error("Gaussian heatmaps mix peak conventions")]
    MixedConvention,

    #[error("no loss/error witness pair found after {0} candidates")]
    WitnessNotFound(usize),

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
