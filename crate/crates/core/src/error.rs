//! Crate-wide error type.
//!
//! Errors are grouped by how a caller should react to them: bad inputs,
//! enumeration guards exceeded, structural preconditions (reversibility)
//! missing, hard inequality assertions failing, and numerical breakdown.

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model construction or arguments (bad parameters, malformed
    /// boundary, out-of-range vertex, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// An exact computation would exceed its enumeration guard. The guards
    /// are deliberate: enumeration cost is exponential and the caller should
    /// switch to a sampling mode instead of waiting forever.
    #[error("{what}: size {size} exceeds limit {limit}")]
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    /// An operation that requires detailed balance was handed a kernel that
    /// does not satisfy it within tolerance.
    #[error("kernel not reversible for the supplied distribution (max imbalance {imbalance:.3e})")]
    NotReversible { imbalance: f64 },

    /// A mathematical inequality that must hold unconditionally failed.
    /// This indicates a genuine bug (or broken input data), never a
    /// statistical fluctuation, so it is an error rather than a report field.
    #[error("inequality violated in {what}: lhs {lhs:.12e} > rhs {rhs:.12e}")]
    BoundViolation {
        what: &'static str,
        lhs: f64,
        rhs: f64,
    },

    /// Numerical failure: non-convergence, degenerate normalization, overflow.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
