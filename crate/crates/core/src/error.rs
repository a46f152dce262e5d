use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("unknown edge `{0}`-`{1}`")]
    UnknownEdge(String, String),

    #[error("node `{0}` already present")]
    DuplicateNode(String),

    #[error("edge `{0}`-`{1}` already present")]
    DuplicateEdge(String, String),

    #[error("invalid graph delta: {0}")]
    InvalidDelta(String),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by the input data rather than by the caller.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::UnknownNode(_)
                | Error::UnknownEdge(..)
                | Error::DuplicateNode(_)
                | Error::DuplicateEdge(..)
                | Error::InvalidDelta(_)
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::Checkpoint(_)
        )
    }
}
