//! Numeric bounds shared across the crate.
//!
//! Two levels are used. [`Utility`] is all the matching machinery needs:
//! a totally ordered (in practice), copyable value with subtraction. Exact
//! types such as `i64` or `num_rational::Rational64` satisfy it, which lets
//! deferred acceptance and the brute-force verifiers run on hand-built
//! integer or rational preference tables. [`Scalar`] adds floating-point
//! operations for everything that draws random values or evaluates closed
//! forms, and is implemented for `f32` and `f64`.

use std::fmt::{Debug, Display};
use std::ops::Sub;

use num_traits::{Float, FromPrimitive, NumCast};

/// Ordered value used to rank partners.
pub trait Utility: Copy + PartialOrd + Debug + Send + Sync + Sub<Output = Self> + 'static {}

impl<U> Utility for U where U: Copy + PartialOrd + Debug + Send + Sync + Sub<Output = U> + 'static {}

/// Floating-point utility used by market generation, strategies and statistics.
pub trait Scalar: Utility + Float + FromPrimitive + NumCast + Display + Default {
    /// Converts an `f64` literal or config value.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every supported scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Largest value strictly below one.
    fn below_one() -> Self {
        Self::one() - Self::epsilon() / (Self::one() + Self::one())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Strict descending order by utility, ties broken by the lower id.
pub(crate) fn by_utility_desc<U: PartialOrd>(a: (usize, U), b: (usize, U)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn below_one_is_the_predecessor_of_one() {
        assert!(f32::below_one() < 1.0);
        assert_eq!(f32::below_one(), 1.0 - f32::EPSILON / 2.0);
        assert!(f64::below_one() < 1.0);
        assert_eq!(f64::below_one() + f64::EPSILON / 2.0, 1.0);
    }

    #[test]
    fn descending_order_breaks_ties_by_id() {
        let mut v = vec![(3, 1.0), (1, 2.0), (0, 1.0)];
        v.sort_by(|a, b| by_utility_desc(*a, *b));
        assert_eq!(v, vec![(1, 2.0), (0, 1.0), (3, 1.0)]);
    }
}
