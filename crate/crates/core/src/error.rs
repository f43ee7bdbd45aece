//! Error type shared across the crate, with a stable mapping to process
//! exit codes for the CLI (0 success, 1 usage, 2 data, 3 numerical).

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad invocation: invalid flag combinations, malformed parameters.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data failed validation or parsing.
    #[error("data error: {0}")]
    Data(String),

    /// A numerical procedure failed (non-convergence, degenerate system).
    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code contract: 0 success, 1 usage error, 2 data error,
    /// 3 numerical failure. I/O problems count as data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
