use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input failed validation. `field` names the offending parameter.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    /// The saddle-point optimization blew up while computing `bound`.
    #[error("solver diverged while computing the {bound} bound: {reason}")]
    Diverged { bound: String, reason: String },

    #[error("behavior policy assigns zero probability to logged action {action} in state {state}")]
    ZeroBehaviorProbability { state: usize, action: usize },

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::Singular(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
