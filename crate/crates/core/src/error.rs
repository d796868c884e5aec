use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("cannot encode {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("dataset entry {index}: {reason}")]
    Dataset { index: usize, reason: String },

    #[error("dataset: {0}")]
    EmptyDataset(String),

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Failures while reading or validating a model checkpoint.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: Vec<u8> },

    #[error("unsupported checkpoint version: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),

    #[error("checkpoint architecture invalid: {0}")]
    Architecture(String),

    #[error(
        "checkpoint parameter count mismatch: architecture needs {expected}, file has {found}"
    )]
    ParamCount { expected: u64, found: u64 },

    #[error("checkpoint contains non-finite parameter at index {0}")]
    NonFinite(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad numbers rather than bad data or usage.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
