//! Scalar abstraction: every numerical routine in this crate is generic over
//! the floating-point type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable throughout the library (`f32` or `f64`).
///
/// The bound is a plain alias over the `num-traits` hierarchy plus the
/// marker traits `ndarray` needs for matrix arithmetic. Any type meeting
/// the bounds gets the implementation for free.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ScalarOperand + Sum + Display + Debug + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    ///
    /// Panics if the value is not representable, which cannot happen for the
    /// finite literals used internally.
    fn cast(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("finite f64 constant")
    }

    /// Converts a particle count or dimension into this scalar type.
    fn cast_usize(value: usize) -> Self {
        <Self as FromPrimitive>::from_usize(value).expect("usize within scalar range")
    }

    /// Widens to `f64`, mostly for reporting and error messages.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + ScalarOperand
        + Sum
        + Display
        + Debug
        + Send
        + Sync
        + 'static
{
}
