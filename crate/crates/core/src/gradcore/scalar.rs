use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Real-valued scalar that differentiable code is written against.
///
/// Implemented by `f64` (plain evaluation) and by [`Var`](super::Var)
/// (recorded on a tape). Every method must compute the same value for both.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same evaluation context as `self`.
    fn lift(self, v: f64) -> Self;
    /// Same value, no derivative.
    fn detach(self) -> Self {
        self.lift(self.value())
    }

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn acos(self) -> Self;
    fn abs(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn sigmoid(self) -> Self;
    /// `max(x, 0)` with subgradient 0 at the kink.
    fn relu(self) -> Self;
    /// Clamp into `[lo, hi]`; derivative 1 strictly inside, 0 elsewhere.
    fn clamp(self, lo: f64, hi: f64) -> Self;

    fn square(self) -> Self {
        self * self
    }

    /// `c - self`
    fn rsub(self, c: f64) -> Self {
        -self + c
    }

    fn recip(self) -> Self;
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, v: f64) -> Self {
        v
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn acos(self) -> Self {
        f64::acos(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    #[inline]
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    #[inline]
    fn clamp(self, lo: f64, hi: f64) -> Self {
        f64::clamp(self, lo, hi)
    }
    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }
}
