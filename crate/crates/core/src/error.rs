use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("maximum step count {max_steps} exceeded at t = {t}")]
    MaxSteps { t: f64, max_steps: usize },

    #[error("tape does not match the field it is replayed against: {0}")]
    StaleTape(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },

    #[error("system generation failed: {0}")]
    Generation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for failures caused by the numerics (divergence, step limits)
    /// rather than by bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::IntegrationFailure { .. } | Error::MaxSteps { .. } | Error::TrainingDiverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
