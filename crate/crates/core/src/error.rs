use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The joint configuration does not determine a rotation.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// The arithmetic mean of the rotations is rank deficient.
    #[error("degenerate rotation mean: singular values {0:?}")]
    DegenerateMean([f64; 3]),

    #[error("rotation initialization failed: all {attempted} prediction pairs were degenerate")]
    InitializationFailed { attempted: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected major version {expected})")]
    VersionMismatch { found: String, expected: u16 },

    #[error("checksum mismatch: file is truncated or corrupted")]
    Checksum,

    #[error("configuration hash mismatch: checkpoint has {stored}, run uses {current}")]
    ConfigMismatch { stored: String, current: String },

    #[error("hand template mismatch: checkpoint has {stored}, dataset has {current}")]
    TemplateMismatch { stored: String, current: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
