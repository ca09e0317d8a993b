//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model construction and bound computations.
///
/// Numerical singularity of a *result* (e.g. an unbounded CRB) is not an
/// error; it is reported through structured verdicts. `CrbError` covers
/// genuine failures: inconsistent dimensions, invalid inputs, and matrices
/// whose invertibility is a precondition of the requested operation.
#[derive(Debug, Error)]
pub enum CrbError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A matrix that must be invertible for the requested operation is
    /// numerically rank-deficient.
    #[error("{name} is numerically singular: rank {rank} of {dim}, min singular value {min_singular_value:.3e}")]
    SingularMatrix {
        name: &'static str,
        dim: usize,
        rank: usize,
        min_singular_value: f64,
    },

    #[error("noise power must be positive and finite, got {0}")]
    InvalidNoisePower(f64),

    #[error("snapshot index {index} out of range for {n_snapshots} snapshots")]
    SnapshotOutOfRange { index: usize, n_snapshots: usize },

    #[error("parameter index {index} out of range for {n_params} parameters")]
    ParamOutOfRange { index: usize, n_params: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),
}
