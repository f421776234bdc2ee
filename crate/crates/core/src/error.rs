use thiserror::Error;

/// Errors raised by the analysis, simulation and Monte Carlo layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {what}{}", condition.map(|c| format!(" (condition number {c:.3e})")).unwrap_or_default())]
    NumericalFailure {
        what: String,
        condition: Option<f64>,
    },

    #[error("the eigenvalue-1 eigenspace is empty")]
    EmptyEigenspace,

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("divergence detected{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    DivergenceDetected { step: Option<u64> },

    #[error("all {n_trials} trials diverged")]
    AllDiverged { n_trials: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numerical(what: impl Into<String>) -> Self {
        Error::NumericalFailure {
            what: what.into(),
            condition: None,
        }
    }
}
