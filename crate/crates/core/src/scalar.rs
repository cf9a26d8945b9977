//! Scalar abstractions shared by the closed-form and exact-model layers.
//!
//! Everything that only needs field arithmetic and ordering is written
//! against [`Scalar`], so it runs on `f32`, `f64` and on exact rationals
//! ([`Rational`]). Operations that take square roots (anything
//! parameterised by a Pearson coefficient) require [`Real`].

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

/// Exact rational scalar used for zero-tolerance checks.
pub type Rational = Ratio<i128>;

/// Ordered field element usable as a probability.
pub trait Scalar:
    Num + Signed + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Num
        + Signed
        + Copy
        + PartialOrd
        + FromPrimitive
        + ToPrimitive
        + Debug
        + Send
        + Sync
        + 'static
{
}

/// Floating-point scalar (`f32` / `f64`).
pub trait Real: Scalar + Float {}

impl<T> Real for T where T: Scalar + Float {}

/// Converts an `f64` literal into `T`.
///
/// Rationals receive the closest small-denominator approximation, so
/// `lit::<Rational>(0.1)` is exactly `1/10`.
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).unwrap_or_else(|| panic!("literal {x} is not representable"))
}

pub(crate) fn min<T: Scalar>(a: T, b: T) -> T {
    if b < a {
        b
    } else {
        a
    }
}

pub(crate) fn max<T: Scalar>(a: T, b: T) -> T {
    if b > a {
        b
    } else {
        a
    }
}

pub(crate) fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub(crate) fn is_probability<T: Scalar>(x: T) -> bool {
    x >= T::zero() && x <= T::one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_literals_are_exact_for_short_decimals() {
        assert_eq!(lit::<Rational>(0.1), Rational::new(1, 10));
        assert_eq!(lit::<Rational>(0.375), Rational::new(3, 8));
        assert_eq!(lit::<Rational>(1e-12), Rational::new(1, 1_000_000_000_000));
    }

    #[test]
    fn min_max() {
        assert_eq!(min(0.3, 0.2), 0.2);
        assert_eq!(
            max(Rational::new(1, 3), Rational::new(1, 2)),
            Rational::new(1, 2)
        );
    }
}
