use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("Riccati solver blow-up at step {step}: |c| = {magnitude:e} exceeds cap {cap:e}")]
    RiccatiBlowUp { step: usize, magnitude: f64, cap: f64 },

    #[error("coefficient check failed: {0}")]
    Coefficient(String),

    #[error("regression failed at step {step}: {reason}")]
    Regression { step: usize, reason: String },
}

impl LabError {
    /// True for failures of the numerics (as opposed to invalid input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            LabError::NonFinite { .. } | LabError::RiccatiBlowUp { .. } | LabError::Regression { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
