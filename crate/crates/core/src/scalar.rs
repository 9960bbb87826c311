//! Numeric abstraction shared by the reward, advantage, policy and analytics code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric routines are generic over.
///
/// Implemented for `f32` and `f64`. The crate root exposes `f64` aliases for
/// every generic type, which is what the orchestration layers use.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only for values no float can hold.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance used on the `>= 1.0` success comparison.
    fn success_eps() -> Self {
        Self::lit(1e-9)
    }

    /// Stabiliser added to the group standard deviation.
    fn advantage_eps() -> Self {
        Self::lit(1e-8)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean; zero for an empty slice.
pub fn mean<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    values.iter().copied().sum::<T>() / T::lit(values.len() as f64)
}

/// Population standard deviation (divides by `n`).
pub fn population_std<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let m = mean(values);
    let var = values.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / T::lit(values.len() as f64);
    var.sqrt()
}
