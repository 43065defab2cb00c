use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used throughout the simulator: `f32` or `f64`.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + FromStr + Debug + Display + Default + Sum + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let n = T::from_usize(values.len())?;
    Some(values.iter().copied().sum::<T>() / n)
}

/// Population standard deviation (divides by N).
pub fn population_std<T: Scalar>(values: &[T]) -> Option<T> {
    let m = mean(values)?;
    let n = T::from_usize(values.len())?;
    let var = values.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
    Some(var.sqrt())
}
