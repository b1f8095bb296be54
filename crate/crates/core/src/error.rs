//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any toolkit module.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Signal shorter than one analysis window.
    #[error("signal too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("configuration error: {0}")]
    Config(String),

    /// A class label outside the valid range.
    #[error("label error: {0}")]
    Label(String),

    #[error("data error: {0}")]
    Data(String),

    /// A manifest row violating dataset invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed binary or textual file contents.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
