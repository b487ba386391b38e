//! Error type shared across the crate.

use thiserror::Error;

/// Unified error for configuration, parsing, validation, and I/O failures.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration violates a structural invariant (bad ring extents,
    /// angle bin count that does not divide 360, mask ids out of range, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Tensor or map shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input bytes or text could not be parsed at all.
    #[error("parse error: {0}")]
    Parse(String),

    /// Input parsed but the content breaks a documented contract
    /// (non-finite values, dangling ids, inconsistent dimensions, ...).
    #[error("invalid data: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand constructors; handy for callers assembling these errors too.
impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
