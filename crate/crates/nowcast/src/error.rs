//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes between operands.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Empty input where at least one element is required.
    #[error("empty input: {0}")]
    Empty(String),

    /// Values outside the operation's domain (negative, NaN, wrong unit, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// A file does not match the expected container format.
    #[error("format error: {0}")]
    Format(String),

    /// A file is structurally valid but its payload is damaged or truncated.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// Degenerate input for which the operation has no defined answer.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
