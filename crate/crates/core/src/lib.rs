//! Structured weight sharing for low-latency inference on systolic
//! matrix-multiply hardware.
//!
//! A large weight matrix is replaced by a single shared `k x k` block `M`
//! tiled over the full shape, with one learned diagonal vector per tile to
//! differentiate the copies. The array then loads `M` once and streams
//! inputs through it, instead of reloading a block per tile. This crate
//! provides:
//!
//! - the parametrization itself with its dense expansion and a
//!   broadcast-style matrix-vector product ([`vvma`]);
//! - dense linear algebra for the oracles: a one-sided Jacobi SVD and the
//!   optimal low-rank truncation error ([`linalg`]);
//! - Adam fitting of the structured form and of parameter-matched low-rank
//!   baselines to arbitrary target matrices ([`fit`]);
//! - closed-form clock/FLOP calculators for a weight-stationary `k x k`
//!   unit ([`costmodel`]) and a cycle-accurate simulator that validates
//!   them ([`systolic`]);
//! - a minimal reverse-mode trainer for layer stacks with global-norm
//!   gradient clipping ([`train`]).
//!
//! The numeric kernels are generic over the scalar type via [`Scalar`];
//! the aliases below fix `f64`, which is what every shipped experiment and
//! file format uses.

pub mod costmodel;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod matrix;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod systolic;
pub mod train;
pub mod vvma;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use matrix::{DenseMatrix, Vector};
pub use vvma::{pad_shape, InitSpec, VvmaParam};

/// Double-precision matrix, the interchange type of the CLI and file formats.
pub type DenseMatrix64 = matrix::DenseMatrix<f64>;
pub type Vector64 = matrix::Vector<f64>;
pub type VvmaParam64 = vvma::VvmaParam<f64>;
pub type SvdResult64 = linalg::SvdResult<f64>;
pub type LowRankParam64 = fit::LowRankParam<f64>;

/// Single-precision variants, available but unused by the experiments.
pub type DenseMatrix32 = matrix::DenseMatrix<f32>;
pub type Vector32 = matrix::Vector<f32>;
pub type VvmaParam32 = vvma::VvmaParam<f32>;
