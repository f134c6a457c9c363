use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::data::CaseId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("code length mismatch: {0} vs {1} bits")]
    CodeLength(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered ({0}); training diverged")]
    Divergence(&'static str),

    #[error("case id {0} already present")]
    DuplicateId(CaseId),

    #[error("case id {0} not found")]
    UnknownId(CaseId),

    #[error("index is empty")]
    EmptyIndex,

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
