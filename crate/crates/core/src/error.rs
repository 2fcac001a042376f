use thiserror::Error;

/// Errors raised by grid, calculus, groupoid and flow operations.
#[derive(Debug, Error)]
pub enum HflowError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular frame at node {node}: |det| = {det:e}")]
    SingularFrame { node: usize, det: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported field file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("illegal index operation: {0}")]
    IllegalIndex(String),

    #[error("identity violation in {what}: discrepancy {value:e} exceeds {tolerance:e}")]
    IdentityViolation {
        what: String,
        value: f64,
        tolerance: f64,
    },

    #[error("point {0:?} lies outside the chart")]
    OutsideChart(Vec<f64>),

    #[error("continuation failure at s = {s}: {reason}")]
    ContinuationFailure { s: f64, reason: String },

    #[error("unknown recipe `{0}`")]
    UnknownRecipe(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed document: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, HflowError>;
