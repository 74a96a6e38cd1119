//! Scalar abstraction shared by the float network, training and augmentation code.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar type the network is generic over.
///
/// Implemented for `f32` (training and deployment) and `f64`
/// (gradient checks and reference oracles).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(v: f64) -> Self;

    /// Widening conversion to `f64`.
    fn to_f64_lossless(self) -> f64;

    /// Tag written into serialized containers.
    const DTYPE: crate::container::DType;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
    const DTYPE: crate::container::DType = crate::container::DType::F32;
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
    const DTYPE: crate::container::DType = crate::container::DType::F64;
}

/// Rounds half away from zero. Used everywhere a real value is mapped to an
/// integer grid so that oracles and kernels agree bit-for-bit.
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    // f64::round already rounds half away from zero
    v.round()
}
