use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("outcome space of {size} outcomes exceeds the enumeration cap of {cap}")]
    Capacity { size: u128, cap: usize },

    #[error("problem generation failed: {0}")]
    Generation(String),

    #[error("malformed problem document: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
