//! Numeric abstractions shared by the assembly and solver layers.
//!
//! Assembly only needs field arithmetic, so it is written against [`Scalar`],
//! which is implemented for `f32`, `f64` and `Ratio<i64>`. The dense solvers
//! need a real field with square roots and eigenvalue routines and use
//! [`Real`] instead.

use std::ops::Neg;

use nalgebra::{ClosedAddAssign, ClosedDivAssign, ClosedMulAssign, ClosedSubAssign, RealField};
use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Ordered field scalar usable inside `nalgebra` matrices.
pub trait Scalar:
    nalgebra::Scalar
    + Copy
    + Num
    + PartialOrd
    + FromPrimitive
    + ToPrimitive
    + ClosedAddAssign
    + ClosedSubAssign
    + ClosedMulAssign
    + ClosedDivAssign
    + Neg<Output = Self>
    + Send
    + Sync
{
    /// Absolute slack for structural checks (row sums, capacity constraints).
    /// Exact types return zero.
    fn slack() -> Self;

    fn int(n: i64) -> Self {
        Self::from_i64(n).expect("integer representable in scalar type")
    }

    fn ratio(num: i64, den: i64) -> Self {
        Self::int(num) / Self::int(den)
    }

    fn magnitude(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }

    fn lossy_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn slack() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn slack() -> Self {
        1e-12
    }
}

impl Scalar for Ratio<i64> {
    fn slack() -> Self {
        Ratio::from_integer(0)
    }
}

/// Real floating-point field used by the linear-algebra heavy modules.
pub trait Real: RealField + Scalar {}

impl<T: RealField + Scalar> Real for T {}

/// Converts an `f64` constant into `T`.
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_slack_is_exact_zero() {
        assert_eq!(<Ratio<i64> as Scalar>::slack(), Ratio::from_integer(0));
        assert_eq!(<Ratio<i64> as Scalar>::ratio(2, 6), Ratio::new(1, 3));
    }

    #[test]
    fn magnitude_matches_abs() {
        assert_eq!((-2.5f64).magnitude(), 2.5);
        assert_eq!(Ratio::new(-3i64, 4).magnitude(), Ratio::new(3, 4));
        assert_eq!(lit::<f32>(0.5), 0.5f32);
    }
}
