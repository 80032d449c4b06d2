//! Closed real intervals `[lo, hi]` with the handful of operations the
//! analysis needs.

use std::fmt;
use std::ops::{Add, Neg};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval<S> {
    pub lo: S,
    pub hi: S,
}

impl<S: Scalar> Interval<S> {
    pub fn new(lo: S, hi: S) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: S) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn zero() -> Self {
        Self::point(S::zero())
    }

    pub fn width(&self) -> S {
        self.hi - self.lo
    }

    pub fn contains(&self, v: S) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// `[a.lo, a.hi] ⊆ [b.lo, b.hi]`
    pub fn is_subset_of(&self, other: &Self) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// Largest absolute value attained on the interval.
    pub fn magnitude(&self) -> S {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn scale(&self, k: S) -> Self {
        let a = self.lo * k;
        let b = self.hi * k;
        if a <= b {
            Self::new(a, b)
        } else {
            Self::new(b, a)
        }
    }

    /// Interval product: min/max over the four endpoint products.
    pub fn mul(&self, other: &Self) -> Self {
        let p = [
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ];
        let lo = p.iter().copied().fold(S::infinity(), S::min);
        let hi = p.iter().copied().fold(S::neg_infinity(), S::max);
        Self::new(lo, hi)
    }

    /// Endpoint-wise midpoint of two intervals.
    pub fn average(&self, other: &Self) -> Self {
        let two = S::one() + S::one();
        Self::new((self.lo + other.lo) / two, (self.hi + other.hi) / two)
    }
}

impl<S: Scalar> Add for Interval<S> {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl<S: Scalar> Neg for Interval<S> {
    type Output = Self;

    fn neg(self) -> Self {
        Self::new(-self.hi, -self.lo)
    }
}

impl<S: Scalar> fmt::Display for Interval<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}
