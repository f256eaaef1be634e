//! Error taxonomy shared by the whole crate.
//!
//! Solver non-convergence is deliberately *not* an error: iterative fits
//! return their best iterate together with a `converged` flag (see
//! [`crate::glasso::GroupLassoSolution`] and [`crate::types::FitReport`]).

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Malformed data: dimension mismatch, non-finite entries, empty index
    /// sets, out-of-range arguments derived from data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Inconsistent solver configuration (bad grids, step sizes, fold counts).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A numerical routine failed irrecoverably (SVD divergence, non-finite
    /// objective).
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The residual-based noise-variance estimator needs m > rank(X); the
    /// caller must supply sigma^2 instead.
    #[error("sigma^2 not estimable: {0}")]
    SigmaNotEstimable(String),

    /// Exhaustive enumeration refused: the support search is exponential in p.
    #[error("problem too large: {0}")]
    RefusedTooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;
