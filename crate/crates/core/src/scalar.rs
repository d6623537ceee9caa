//! Scalar abstraction for the numeric kernels.

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the numeric code is generic over: `f32` or `f64`.
///
/// All shipped experiments and file formats use `f64`; the generic bound
/// exists so the kernels stay precision-agnostic.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into `Self`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal must be representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
