//! Library-wide error type. Variants are grouped by what went wrong so the
//! CLI can map them onto distinct exit codes (config vs. data vs. numeric).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/layer shapes do not compose or violate an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// Architecture or training configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset or checkpoint file is missing, malformed, or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A library-produced value went non-finite (NaN/Inf), e.g. a diverged loss.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
