use std::fmt;

/// Crate-wide error type for data-driven failures.
#[derive(Debug)]
pub enum Error {
    /// Malformed or unreadable file content (images, CSVs, checkpoints, configs).
    Format(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Input data violates a documented precondition (degenerate landmarks,
    /// unplaceable scene, empty sample, mismatched resolutions, ...).
    InvalidInput(String),
    /// A training loop produced a non-finite loss.
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
