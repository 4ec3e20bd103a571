use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The importance ratio between the trained and reference policy left the
    /// numerically meaningful range.
    #[error("degenerate importance ratio: log-weight {log_weight} exceeds cap {cap}")]
    DegenerateImportanceWeight { log_weight: f64, cap: f64 },

    #[error("policy evaluation failed: {0}")]
    Policy(String),

    #[error("no convergence after {steps} steps (total variation {tv_distance:.3e})")]
    NoConvergence { steps: usize, tv_distance: f64 },
}

pub type Result<T> = std::result::Result<T, AlignError>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(AlignError::InvalidArgument(format!("{name} must be finite, got {value}")))
    }
}
