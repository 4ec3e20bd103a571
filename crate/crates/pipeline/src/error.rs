use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad or inconsistent configuration, including missing input files.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training diverged or failed to converge.
    #[error("training failed: {0}")]
    Training(String),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },

    #[error(transparent)]
    Chem(#[from] era_chem::ChemError),

    #[error(transparent)]
    Align(#[from] era_core::AlignError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<era_neural::NeuralError> for PipelineError {
    fn from(e: era_neural::NeuralError) -> Self {
        use era_neural::NeuralError as N;
        match e {
            N::Training { .. } => PipelineError::Training(e.to_string()),
            N::Align(inner) => PipelineError::Align(inner),
            N::Io(source) => PipelineError::Io { context: "model".into(), source },
            other => PipelineError::Config(other.to_string()),
        }
    }
}

impl PipelineError {
    pub fn config(msg: impl Into<String>) -> Self {
        PipelineError::Config(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        PipelineError::Io { context: context.into(), source }
    }

    /// Process exit status: 2 for configuration problems, 3 for training
    /// failures, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Chem(_) => 2,
            PipelineError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            PipelineError::Training(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
