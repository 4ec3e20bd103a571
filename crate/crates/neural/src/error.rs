use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Align(#[from] era_core::AlignError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NeuralError>;

impl From<NeuralError> for era_core::AlignError {
    fn from(e: NeuralError) -> Self {
        match e {
            NeuralError::Align(inner) => inner,
            other => era_core::AlignError::Policy(other.to_string()),
        }
    }
}
