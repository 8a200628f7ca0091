//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor or matrix dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A precondition on values or structure was violated.
    #[error("invalid input: {0}")]
    Contract(String),

    /// A text file (attributes, split, manifest, config) failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    /// An evaluation protocol requirement was violated.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// A tensor file did not start with the expected magic bytes.
    #[error("bad magic bytes {found:?}, expected \"SLRT\"")]
    BadMagic { found: [u8; 4] },

    /// A tensor file declares a format version this build does not read.
    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u32),

    /// A tensor file ended before the declared payload was complete.
    #[error("truncated tensor payload: header declares {expected} values, file holds {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    /// Declared dimensions overflow the addressable size.
    #[error("tensor dimensions overflow addressable size")]
    DimensionOverflow,

    /// An I/O failure tagged with the path it happened on.
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    /// An I/O failure on a raw stream.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an I/O error with the path it happened on.
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
