//! Scalar abstraction for the numeric core.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the numeric core (f32 or f64).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an f64 literal into the working scalar type.
#[inline]
pub fn fl<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("literal conversion")
}
