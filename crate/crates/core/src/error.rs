//! Error type shared by every module in the crate.

use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shape or length mismatch between arrays that must agree.
    Dimension(String),
    /// Invalid argument value (empty batch, K < 2, bad range, ...).
    Argument(String),
    /// Non-finite value or other numeric breakdown; message names the culprit.
    Numeric(String),
    /// Operation called in an invalid order (e.g. backward without forward).
    State(String),
    /// Malformed text artifact; `line` is 1-based.
    Parse { line: usize, message: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Argument(m) => write!(f, "argument error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
        }
    }
}

impl core::error::Error for Error {}
