use thiserror::Error;

/// Errors raised by the library. Input and configuration problems are fatal
/// for the call that hit them; nothing here is retried internally.
#[derive(Debug, Error)]
pub enum DpganError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("sigma_n is zero: privacy loss is unbounded")]
    NoNoise,

    #[error("support violation: the reference distribution assigns zero density to the outcome")]
    SupportViolation,

    #[error("clip constant {c_p} violates the gradient-bound precondition at layer {layer} (limit {limit})")]
    ClipPrecondition { layer: usize, c_p: f64, limit: f64 },

    #[error("activation output is unbounded and no data bound was supplied")]
    UnboundedActivation,

    #[error("labels contain a single class")]
    UniLabel,

    #[error("non-binary value {value} at row {row}, column {col}")]
    NonBinary { row: usize, col: usize, value: f64 },

    #[error("latent covariance is not positive definite after adding coupling ({i}, {j})")]
    NotPositiveDefinite { i: usize, j: usize },

    #[error("non-finite value in {what} at generator iteration {iteration}")]
    NonFinite { what: &'static str, iteration: u64 },

    #[error("per-example gradient norm {norm} exceeds c_g = {c_g} at critic step {step}")]
    GradientBoundViolated { step: u64, norm: f64, c_g: f64 },

    #[error("csv error at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DpganError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> DpganError {
    DpganError::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
