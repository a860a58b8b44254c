//! Scalar abstraction for the math kernel.
//!
//! The kernel is generic over [`Scalar`] so the same routines run in `f32`
//! or `f64`. The pipeline instantiates everything at the crate-level
//! [`Real`](crate::Real) alias (`f64`): its fixed tolerances (1e-9 cache
//! equivalence, 1e-12 softmax normalization) assume 64-bit arithmetic.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

/// Floating-point scalar usable by the math kernel.
pub trait Scalar:
    Float + NumAssign + Sum + Debug + Display + Copy + Send + Sync + 'static
{
    /// Cast from `f64`, for constants and tolerances in generic code.
    fn from_f64(v: f64) -> Self;

    /// Widen to `f64`, for statistics reported at full precision.
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
