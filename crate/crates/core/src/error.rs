use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the fit / generate / evaluate pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema: {0}")]
    Schema(String),

    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    NumericParse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("column {column:?}: unseen category {value:?}")]
    UnseenCategory { column: String, value: String },

    #[error("column {column:?}: {reason}")]
    InvalidValue { column: String, reason: String },

    #[error("id {id} out of range at position {position} (valid {lo}..{hi})")]
    IdOutOfRange {
        position: usize,
        id: u32,
        lo: u32,
        hi: u32,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    NonFiniteLoss(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
