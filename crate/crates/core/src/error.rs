use std::io;

use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or sequence lengths do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A constructor or configuration received an invalid value.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// Input data violates its value contract (targets out of range, bad labels).
    #[error("data error: {0}")]
    Data(String),
    /// An operation was called in a state that does not support it.
    #[error("usage error: {0}")]
    Usage(String),
    /// A file did not match its binary or textual format.
    #[error("format error: {0}")]
    Format(String),
    /// Training produced a non-finite value.
    #[error("training error: {0}")]
    Training(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;
