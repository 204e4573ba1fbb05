use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting engine.
#[derive(Debug, Error)]
pub enum TimeCfError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("format error at line {line}: {detail}")]
    Format { line: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("path error: {}: {source}", path.display())]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("batch element {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<TimeCfError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TimeCfError>;

impl TimeCfError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        TimeCfError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
