use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum AmrError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("linear solver did not converge: {iterations} iterations, relative residual {residual:.3e}")]
    SolverFailure { iterations: usize, residual: f64 },

    /// Newton failed; `trace` holds the residual norm of every iterate.
    #[error("nonlinear solve failed: {reason} (residual trace {trace:?})")]
    NonlinearFailure { reason: String, trace: Vec<f64> },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AmrError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(AmrError::InvalidArgument(msg.into()))
}
