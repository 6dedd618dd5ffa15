//! Crate-wide error type and its mapping onto process exit codes.

use std::path::PathBuf;

/// Errors surfaced by the pipeline. Variants are grouped by how the caller
/// should react: bad input, failed I/O, malformed data, or a failed
/// verification check.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or configuration value is outside its documented domain.
    #[error("{0}")]
    Validation(String),

    /// Reading or writing a file failed.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not parse. `row` is 1-based and
    /// counts the header line of CSV files.
    #[error("{path}:{row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    /// A weight archive is structurally damaged (wrong magic, truncated
    /// payload, size mismatch).
    #[error("weight archive {path}: {message}")]
    ArchiveIntegrity { path: PathBuf, message: String },

    /// A weight archive is intact but was written for a different model
    /// configuration.
    #[error("weight archive {path}: {message}")]
    ArchiveCompatibility { path: PathBuf, message: String },

    /// A self-check (oracle comparison, gradient check, ...) failed.
    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, row: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            row,
            message: message.into(),
        }
    }

    /// Exit code reported by the command-line tool for this error.
    ///
    /// 0 is success; 1 flags invalid input, 2 an I/O or data problem, 3 a
    /// failed verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 1,
            Error::Io { .. } | Error::Parse { .. } => 2,
            Error::ArchiveIntegrity { .. } | Error::ArchiveCompatibility { .. } => 2,
            Error::Verification(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
