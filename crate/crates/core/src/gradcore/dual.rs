//! Forward-mode dual numbers with `N` tangent directions.
//!
//! Used to linearize small dense computations (a pixel's shading estimate)
//! that are then spliced into a tape as a single operation.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; N] }
    }

    /// Seed tangent direction `i`.
    pub fn variable(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Dual { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x *= dv;
        }
        Dual { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for i in 0..N {
            d[i] += o.d[i];
        }
        Dual { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for i in 0..N {
            d[i] -= o.d[i];
        }
        Dual { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v / o.v;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - q * o.d[i]) * inv;
        }
        Dual { v: q, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.v, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Dual { v: self.v + c, d: self.d }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        Dual { v: self.v - c, d: self.d }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        self.chain(self.v * c, c)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        self.chain(self.v / c, 1.0 / c)
    }
}

// Derivative conventions at kinks and singular points follow `Var`.
impl<const N: usize> Scalar for Dual<N> {
    fn value(self) -> f64 {
        self.v
    }
    fn lift(self, v: f64) -> Self {
        Dual::constant(v)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, if s > 0.0 { 0.5 / s } else { 0.0 })
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn acos(self) -> Self {
        let q = 1.0 - self.v * self.v;
        self.chain(self.v.acos(), if q > 0.0 { -1.0 / q.sqrt() } else { 0.0 })
    }
    fn abs(self) -> Self {
        let s = if self.v > 0.0 {
            1.0
        } else if self.v < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(self.v.abs(), s)
    }
    fn powf(self, p: f64) -> Self {
        let v = self.v.powf(p);
        let d = if self.v != 0.0 { p * self.v.powf(p - 1.0) } else if p == 1.0 { 1.0 } else { 0.0 };
        self.chain(v, if d.is_finite() { d } else { 0.0 })
    }
    fn sigmoid(self) -> Self {
        let s = super::sigmoid(self.v);
        self.chain(s, s * (1.0 - s))
    }
    fn relu(self) -> Self {
        if self.v > 0.0 {
            self
        } else {
            Dual::constant(0.0)
        }
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        if self.v > lo && self.v < hi {
            self
        } else {
            Dual::constant(self.v.clamp(lo, hi))
        }
    }
    fn recip(self) -> Self {
        let inv = 1.0 / self.v;
        self.chain(inv, -inv * inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::<2>::variable(3.0, 0);
        let y = Dual::<2>::variable(2.0, 1);
        let f = x * y / (x + 1.0);
        // d/dx = y/(x+1)^2, d/dy = x/(x+1)
        assert!((f.d[0] - 2.0 / 16.0).abs() < 1e-15);
        assert!((f.d[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn matches_central_difference() {
        let g = |x: Dual<1>| (x.sin() * x.exp()).sqrt() + x.sigmoid().ln();
        let x0 = 0.7;
        let h = 1e-6;
        let fd = (g(Dual::constant(x0 + h)).v - g(Dual::constant(x0 - h)).v) / (2.0 * h);
        assert!((g(Dual::variable(x0, 0)).d[0] - fd).abs() < 1e-8);
    }
}
