use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NmfError>;

#[derive(Debug, Error)]
pub enum NmfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("negative entry {value} at row {row}, column {col}")]
    Negative { row: usize, col: usize, value: f64 },

    #[error("parse error in {path} at row {row}, column {col}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Z <= 0 or a non-positive multiplier; the caller should shrink epsilon.
    #[error("step too large: {0}")]
    StepTooLarge(String),

    #[error("epsilon safeguard exhausted at iteration {iteration} (epsilon fell below {floor:e})")]
    SafeguardExhausted { iteration: usize, floor: f64 },

    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

impl NmfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NmfError::Io {
            path: path.into(),
            source,
        }
    }
}
