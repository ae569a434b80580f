use thiserror::Error;

/// Errors raised by the estimators, drivers and harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A schedule was queried outside of its domain (k = 0 or k < start index).
    #[error("step index {k} is outside the schedule domain (start index {start})")]
    Domain { k: u64, start: u64 },

    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),

    /// Mismatched vector lengths or other caller-side contract violations.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A GLR evaluator hit ∂g/∂x₁ = 0 or produced a non-finite value.
    #[error("estimator singularity: {0}")]
    Singularity(String),

    /// A drift or ratio became non-finite during a run.
    #[error("non-finite drift at iteration {k}: {detail}")]
    NonFinite { k: u64, detail: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("did not converge: {0}")]
    NoConvergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
