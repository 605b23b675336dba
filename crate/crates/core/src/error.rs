use thiserror::Error;

/// Errors raised by the test pipeline and its numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The constraint set is empty. `certificate` is a nonnegative combination
    /// of the constraint rows that annihilates the variables and has a
    /// negative right-hand side.
    #[error("constraint set is infeasible (Farkas margin {margin:.3e})")]
    Infeasible { certificate: Vec<f64>, margin: f64 },

    #[error("solver failure: {reason} (kkt residual {residual:.3e})")]
    SolverFailure { reason: String, residual: f64 },

    #[error("weight matrix is singular or ill-conditioned (condition number {condition:.3e})")]
    SingularWeight { condition: f64 },

    #[error("combinatorial guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("internal inconsistency: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
