use thiserror::Error;

/// Errors produced anywhere in the diagnosis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The input is degenerate (zero variance, non-positive temperature
    /// difference, too few points).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
