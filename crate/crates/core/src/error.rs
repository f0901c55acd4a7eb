use std::error::Error;
use std::fmt;

/// Error type shared by all modules in this crate.
#[derive(Debug, Clone, PartialEq)]
pub enum PcError {
    /// An argument violated a documented precondition.
    InvalidArgument(String),
    /// A configuration is structurally unusable (bad level count, channel
    /// widths, filter length, ...).
    InvalidConfig(String),
    /// Tensor shapes are inconsistent with the operation.
    Shape(String),
    /// A low-pass filter could not be normalized (coefficient sum <= 0).
    DegenerateFilter(String),
    /// Non-finite values or other numeric breakdown, with context.
    Numeric(String),
    /// An operation was called before the state it needs exists.
    State(String),
    /// A file or stream does not follow the expected format.
    Format(String),
    /// An I/O failure, with the offending path when known.
    Io(String),
}

impl fmt::Display for PcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PcError::InvalidArgument(m) => write!(f, "invalid argument: {}", m),
            PcError::InvalidConfig(m) => write!(f, "invalid configuration: {}", m),
            PcError::Shape(m) => write!(f, "shape mismatch: {}", m),
            PcError::DegenerateFilter(m) => write!(f, "degenerate filter: {}", m),
            PcError::Numeric(m) => write!(f, "numeric error: {}", m),
            PcError::State(m) => write!(f, "state error: {}", m),
            PcError::Format(m) => write!(f, "format error: {}", m),
            PcError::Io(m) => write!(f, "i/o error: {}", m),
        }
    }
}

impl Error for PcError {}

impl From<std::io::Error> for PcError {
    fn from(e: std::io::Error) -> Self {
        PcError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PcError>;
