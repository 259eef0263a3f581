//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the numerical routines and the experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A precondition on the arguments was violated (index out of range, τ ≤ 0, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A dimension exceeded a documented cap.
    #[error("dimension cap exceeded: {0}")]
    DimensionCap(String),
    /// A floating-point computation would overflow or produced a non-finite value.
    #[error("numerical overflow: {0}")]
    Overflow(String),
    /// A symmetric matrix was not positive semidefinite within tolerance.
    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),
    /// An iterative solver failed to converge.
    #[error("non-convergence: {0}")]
    NonConvergence(String),
    /// A vector field has a degenerate zero, violating the nondegeneracy hypothesis.
    #[error("degenerate zero of the vector field at {location:?} (|det A| = {det:e}); the index theorem requires nondegenerate zeros")]
    DegenerateZero { location: Vec<f64>, det: f64 },
    /// Two independent evaluation routes disagreed beyond tolerance.
    #[error("internal consistency failure: {0}")]
    Consistency(String),
    /// A point lies outside the domain of a chart.
    #[error("outside chart domain: {0}")]
    Chart(String),
    /// Quadrature refinement disagreed beyond tolerance.
    #[error("quadrature under-resolved: {0}")]
    Quadrature(String),
    /// Configuration error (unknown preset, missing field, ...).
    #[error("configuration error: {0}")]
    Config(String),
}

/// Convenience alias.
pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
