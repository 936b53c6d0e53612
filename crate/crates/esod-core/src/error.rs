//! Crate-wide error type.

/// Errors produced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Dimensions of two operands (or an operand and a spec) disagree.
    #[error("shape error: {0}")]
    Shape(String),
    /// A scalar or structural parameter is out of its valid range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A ground-truth annotation violates its invariants.
    #[error("annotation error: {0}")]
    Annotation(String),
    /// A file does not conform to its declared format.
    #[error("format error: {0}")]
    Format(String),
    /// A line-oriented input failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
