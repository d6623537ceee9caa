//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid dimension: {0}")]
    BadDimension(String),

    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },

    #[error("invalid distribution parameters: {0}")]
    BadDistribution(&'static str),

    #[error("jacobi svd did not converge after {sweeps} sweeps (off-diagonal ratio {ratio:e})")]
    SvdNoConvergence { sweeps: usize, ratio: f64 },

    #[error("rank {p} out of range for a {m}x{n} matrix")]
    RankOutOfRange { p: usize, m: usize, n: usize },

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("trace budget exceeded: {events} events (limit {limit})")]
    TraceBudget { events: u64, limit: u64 },

    #[error("model description is empty")]
    EmptyModel,

    #[error("missing contribution at position {j} while accumulating an output block")]
    MissingContribution { j: usize },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
