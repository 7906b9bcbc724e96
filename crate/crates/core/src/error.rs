use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, config).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("insufficient labeled samples: have {have}, need at least {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("{path}: {source}")]
    Pnm {
        path: PathBuf,
        #[source]
        source: PnmError,
    },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PnmError {
    #[error("unknown magic {0:?}, expected P5 or P6")]
    BadMagic(String),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic, not a SAQM checkpoint")]
    BadMagic,
    #[error("format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint")]
    Truncated,
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
