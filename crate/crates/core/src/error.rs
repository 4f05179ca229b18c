use thiserror::Error;

/// Errors produced by model construction, solvers and evaluators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The exhaustive path would have to visit more items than the configured cap.
    #[error("instance too large: {what} needs {required} items, cap is {cap}; {hint}")]
    InstanceTooLarge {
        what: &'static str,
        required: u128,
        cap: u128,
        hint: &'static str,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// A self-check inside a construction failed. Signals a bug, not bad input.
    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("linear program is {0}")]
    Lp(crate::lp::LpStatus),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
