use thiserror::Error;

pub type Result<T> = std::result::Result<T, CpError>;

#[derive(Debug, Error)]
pub enum CpError {
    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },

    #[error("system is not positive definite after regularization (lambda = {lambda})")]
    Singular { lambda: f64 },

    #[error("size {requested} exceeds cap {cap}")]
    TooLarge { requested: usize, cap: usize },

    #[error("input tensor has zero norm")]
    ZeroNorm,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
