use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("store {path}: {msg}")]
    Store { path: PathBuf, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("zero-norm {what} vector at row {row}")]
    ZeroNorm { what: &'static str, row: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::DuplicateId { .. }
            | Error::Store { .. }
            | Error::Shape(_) => 2,
            Error::ZeroNorm { .. }
            | Error::NonFinite(_)
            | Error::Degenerate(_)
            | Error::Diverged { .. } => 3,
        }
    }
}
