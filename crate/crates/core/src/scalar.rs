//! Numeric abstraction shared by the decision rules, metrics and rank statistics.
//!
//! Everything that only needs field arithmetic and ordering is generic over
//! [`Scalar`], so the same code runs on `f32`/`f64` in production and on exact
//! rationals in verification code. Routines that need square roots or
//! logarithms (correlation) additionally require [`num_traits::Float`].

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num};

/// An ordered field element usable by the scoring and statistics code.
pub trait Scalar: Num + Clone + PartialOrd + FromPrimitive + Debug + Send + Sync + 'static {
    /// `false` for NaN and infinities. Exact types are always finite.
    fn is_finite_value(&self) -> bool;

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }
}

impl Scalar for f32 {
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Ratio<i64> {
    fn is_finite_value(&self) -> bool {
        true
    }
}

impl Scalar for Ratio<i128> {
    fn is_finite_value(&self) -> bool {
        true
    }
}

/// Total order for values already known to be comparable; NaN sorts as equal.
pub(crate) fn cmp_partial<T: PartialOrd>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
}

/// Converts a finite `f64` into `T`, panicking only for types that cannot hold it.
pub fn scalar_from_f64<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("value not representable in scalar type")
}
