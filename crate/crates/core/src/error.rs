use thiserror::Error;

/// Errors raised across the debiasing pipeline.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("feature dimension mismatch: expected {expected}, found {found} (sample {sample}, index {index})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        sample: usize,
        index: usize,
    },

    #[error("biasing function {function} returned {value} outside [0, {upper}] (sample {sample}, index {index})")]
    EvaluatorOutOfRange {
        function: usize,
        value: f64,
        upper: f64,
        sample: usize,
        index: usize,
    },

    #[error("observation {index} of sample {sample} has zero weight under its own biasing function")]
    OwnWeightZero { sample: usize, index: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("kappa must be positive, got {0}")]
    BadKappa(f64),

    #[error("pooled row {row} has no positive biasing weight (log of zero)")]
    LogOfZero { row: usize },

    #[error("W must be strictly positive, got {value} at position {index}")]
    NonPositiveW { index: usize, value: f64 },

    #[error("solver did not converge after {iterations} iterations (max |Gamma - 1| = {residual:e})")]
    NotConverged {
        w_hat: Vec<f64>,
        residual: f64,
        iterations: usize,
    },

    #[error("loss {loss} cannot be evaluated for a {task} model on these observations")]
    TaskMismatch { loss: String, task: String },

    #[error("weighted design matrix carries no information (rank 0)")]
    RankDeficient,

    #[error("classes are separable under the weights; logistic coefficients diverge (|beta| = {norm:e})")]
    Separable { norm: f64 },

    #[error("rejection sampling stalled for stratum {stratum}: {accepted} accepted out of {attempts} draws")]
    RejectionStall {
        stratum: usize,
        accepted: usize,
        attempts: usize,
    },

    #[error("unknown scenario preset '{0}'")]
    UnknownPreset(String),

    #[error("parse error at line {line}, column '{column}': {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
