use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the active-learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pool violation: {0}")]
    PoolViolation(String),

    #[error("insufficient capacity: need {needed} unlabeled instances, have {available}")]
    Capacity { needed: usize, available: usize },

    #[error("budget exhausted: remaining {remaining}, cost {cost}")]
    BudgetExhausted { remaining: f64, cost: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("uncertainty measure error: {0}")]
    Measure(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
