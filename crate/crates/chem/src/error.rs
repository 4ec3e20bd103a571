use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no Crippen atom type for atom {atom} ({element})")]
    UnclassifiedAtom { atom: usize, element: String },

    #[error("malformed pattern {pattern:?}: {message}")]
    Pattern { pattern: String, message: String },

    #[error("property {property} unavailable for {smiles:?}")]
    MissingProperty { property: String, smiles: String },

    #[error("data file: {0}")]
    Data(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ChemError>;
