use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    #[error("no images found in {0}")]
    EmptyTraversal(PathBuf),

    #[error("not a model file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported model file version {0}")]
    BadVersion(u16),

    #[error("model file checksum mismatch (corrupt or truncated file)")]
    ChecksumMismatch,

    #[error("malformed model file: {0}")]
    MalformedModel(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimMismatch {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
