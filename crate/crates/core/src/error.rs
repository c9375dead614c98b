use thiserror::Error;

/// Errors raised across the simulation core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate anchor geometry: {0}")]
    Geometry(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("timestamps not strictly increasing at row {row}")]
    NonMonotone { row: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("class '{class}' has {count} samples, fewer than {folds} folds")]
    TooFewSamples {
        class: String,
        count: usize,
        folds: usize,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
