use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The iterative linear solver did not reach the target residual.
    #[error("linear solver failed: relative residual {residual:.3e} after {iterations} iterations")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
