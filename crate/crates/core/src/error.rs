use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vector: {0}")]
    InvalidVector(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dim { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid cache entry: {0}")]
    InvalidEntry(String),

    #[error("label {label} out of range for {n_classes} classes")]
    Label { label: usize, n_classes: usize },

    #[error("cache is empty")]
    EmptyCache,

    #[error("stream contains no records")]
    EmptyStream,

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported stream version {0} (expected 1)")]
    Version(u32),

    #[error("file truncated inside record {record}")]
    Truncated { record: u64 },

    #[error("gradient descent diverged at step {step} (loss is not finite)")]
    Divergence { step: usize },

    #[error("record {id}: {source}")]
    Record {
        id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn at_record(self, id: u64) -> Self {
        match self {
            e @ Error::Record { .. } => e,
            e @ Error::Truncated { .. } => e,
            e => Error::Record {
                id,
                source: Box::new(e),
            },
        }
    }
}
