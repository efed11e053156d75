use thiserror::Error;

/// Errors raised by estimation, partitioning and I/O routines.
#[derive(Debug, Error)]
pub enum EsiError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate domain: box measure is zero")]
    DegenerateDomain,

    #[error("location {0:?} lies outside the partition domain")]
    OutOfDomain(Vec<f64>),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = EsiError> = std::result::Result<T, E>;
