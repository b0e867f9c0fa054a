//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the lab's library layer.
///
/// The CLI maps these onto its exit-code contract: configuration and
/// validation problems exit 2, runtime aborts (non-finite losses, corrupt
/// snapshots mid-run) exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad dimensions, bad fractions, unknown keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// A symbol or token id outside the active vocabulary.
    #[error("encoding error: {0}")]
    Encoding(String),

    /// A precondition on the data was violated (empty dataset, empty response, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A malformed line in a JSONL input.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A loss or gradient stopped being finite; carries enough context to
    /// identify the offending batch.
    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    /// A snapshot file failed its integrity checks.
    #[error("corrupt snapshot {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
