//! Scalar abstraction for the numeric kernels.
//!
//! Everything in this crate that does arithmetic is generic over [`Scalar`],
//! so the same code runs in `f32` or `f64`. The concrete aliases at the crate
//! root pin `f64`, which is what the harness and CLI use.

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable by every kernel in this crate.
///
/// A blanket impl covers `f32` and `f64`; custom float types qualify
/// automatically if they satisfy the bounds.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + std::iter::Sum + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + std::iter::Sum
        + std::fmt::Debug
        + std::fmt::Display
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` constant into the working scalar type.
///
/// Panics only if the target type cannot represent any `f64`, which cannot
/// happen for the supported `f32`/`f64` instantiations.
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("scalar conversion from f64")
}
