use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dataset has no transitions for state {state}, action {action}")]
    UncoveredPair { state: usize, action: usize },

    #[error("dataset record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("model is invalid: {0}")]
    InvalidModel(String),

    #[error("no convergence after {iterations} sweeps (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),

    #[error("enumeration of {required} policies exceeds the budget of {budget}")]
    EnumerationBudget { required: u128, budget: u128 },

    #[error("empty trajectory batch")]
    EmptyBatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
