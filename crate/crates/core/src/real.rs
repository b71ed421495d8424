//! Scalar abstraction. Everything numeric in this crate is generic over
//! [`Real`], implemented for `f32` and `f64`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
///
/// Bundles nalgebra's `RealField` (elementary functions, linear algebra)
/// with num-traits conversions plus the one special function the likelihood
/// code needs.
pub trait Real:
    RealField + FromPrimitive + ToPrimitive + Copy + Default + Sum + Display + LowerExp + Debug
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Smallest positive normal value, used as a probability floor.
    fn tiny() -> Self;

    /// Machine epsilon.
    fn eps() -> Self;
}

impl Real for f64 {
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
    fn tiny() -> Self {
        f64::MIN_POSITIVE
    }
    fn eps() -> Self {
        f64::EPSILON
    }
}

impl Real for f32 {
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
    fn tiny() -> Self {
        f32::MIN_POSITIVE
    }
    fn eps() -> Self {
        f32::EPSILON
    }
}

/// Shorthand for lifting an `f64` constant into the generic scalar type.
#[inline]
pub fn cst<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("constant not representable in scalar type")
}
