use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("function evaluation failed: {0}")]
    Evaluation(String),

    #[error("label must be 0 or 1, got {0}")]
    Label(u8),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Divergence {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("trace/params mismatch: {0}")]
    Consistency(String),

    #[error("schema error in column `{column}`: {reason}")]
    Schema { column: String, reason: String },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("augmentation error: {0}")]
    Augmentation(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("subsample error: {0}")]
    Subsample(String),

    #[error("unsupported format version: file has {found}, expected {expected}")]
    Version { found: u8, expected: u8 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
