use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution spec: {0}")]
    InvalidSpec(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite margin at t = {time} (index {index}); step size too large?")]
    NonFinite { time: f64, index: usize },

    #[error("weight function returned non-finite value {value} at margin {margin}")]
    NonFiniteWeight { margin: f64, value: f64 },

    #[error("time {t} exceeds the guaranteed horizon {tau1}")]
    BeyondHorizon { t: f64, tau1: f64 },

    #[error("row {row} has zero norm; cosine similarity undefined")]
    ZeroNorm { row: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
