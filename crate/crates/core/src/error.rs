use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of {size}")]
    InvalidId { id: u32, size: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("every target in the batch is ignored")]
    EmptyBatch,
    #[error("document has no sentences")]
    EmptyDocument,
    #[error("dataset is empty: {0}")]
    EmptyDataset(String),
    #[error("split is empty")]
    EmptySplit,
    #[error("cannot stratify: {0}")]
    Stratification(String),
    #[error("series for {ticker} has fewer than two points")]
    InsufficientHistory { ticker: String },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate entry {0}")]
    Duplicate(String),
    #[error("not a checkpoint file")]
    NotACheckpoint,
    #[error("checkpoint format version {found} is newer than supported version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::CheckpointMismatch(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
