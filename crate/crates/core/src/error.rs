use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("step size error: {0}")]
    StepSize(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("rewards must lie in [0, 1] for theoretical step sizes, found range [{min}, {max}]")]
    RewardRange { min: f64, max: f64 },

    #[error("estimator error: {0}")]
    Estimator(String),

    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by arithmetic rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::StepSize(_))
    }
}
