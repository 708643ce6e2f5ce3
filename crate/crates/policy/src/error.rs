use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {stage} (layer {layer})")]
    Numeric { layer: usize, stage: &'static str },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Core(#[from] nego_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

pub(crate) fn invalid(msg: impl Into<String>) -> PolicyError {
    PolicyError::InvalidInput(msg.into())
}
