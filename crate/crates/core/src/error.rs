use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke a shape, mode or argument contract.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("conversion error: {0}")]
    Conversion(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("model load error: {0}")]
    Load(#[from] LoadError),

    #[error("parse error in {path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Failures while decoding a serialized model.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoadError {
    #[error("bad magic")]
    BadMagic,

    #[error("unsupported format version {0}")]
    Version(u8),

    #[error("truncated file: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("blob {name}: manifest length {declared} disagrees with {expected} bytes implied by its shape")]
    BlobLength {
        name: String,
        declared: usize,
        expected: usize,
    },

    #[error("blob section is {found} bytes but the manifest declares {declared}")]
    BlobSection { declared: usize, found: usize },

    #[error("invalid manifest: {0}")]
    Manifest(String),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
