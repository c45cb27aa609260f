//! Small fixed-size vector and box types shared by every module.
//!
//! `Vec3<T>` is generic over [`Scalar`] so the same geometry code runs on
//! plain `f64` values and on recorded tape variables.

use std::ops::{Add, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::gradcore::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

pub type V3 = Vec3<f64>;

impl<T> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> Vec3<U> {
        Vec3::new(f(self.x), f(self.y), f(self.z))
    }
}

impl<T: Copy> Vec3<T> {
    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn zip<U: Copy, R>(self, o: Vec3<U>, mut f: impl FnMut(T, U) -> R) -> Vec3<R> {
        Vec3::new(f(self.x, o.x), f(self.y, o.y), f(self.z, o.z))
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Scalar> Vec3<T> {
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: T) -> Self {
        self.map(|c| c * s)
    }

    pub fn scale_f(self, s: f64) -> Self {
        self.map(|c| c * s)
    }

    pub fn mul_elem(self, o: Self) -> Self {
        self.zip(o, |a, b| a * b)
    }

    pub fn value(self) -> V3 {
        self.map(|c| c.value())
    }

    pub fn detach(self) -> Self {
        self.map(|c| c.detach())
    }

    /// Sum of the three components.
    pub fn sum(self) -> T {
        self.x + self.y + self.z
    }
}

impl V3 {
    pub const ZERO: V3 = Vec3::new(0.0, 0.0, 0.0);
    pub const Z: V3 = Vec3::new(0.0, 0.0, 1.0);

    pub fn normalized(self) -> V3 {
        let l = self.length();
        self.map(|c| c / l)
    }

    pub fn min_elem(self, o: V3) -> V3 {
        self.zip(o, f64::min)
    }

    pub fn max_elem(self, o: V3) -> V3 {
        self.zip(o, f64::max)
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rec. 709 luminance.
    pub fn luminance(self) -> f64 {
        0.2126 * self.x + 0.7152 * self.y + 0.0722 * self.z
    }

    /// Orthonormal tangent frame around a unit vector (Duff et al. branchless ONB).
    pub fn frame(self) -> (V3, V3) {
        let sign = 1.0f64.copysign(self.z);
        let a = -1.0 / (sign + self.z);
        let b = self.x * self.y * a;
        let t = V3::new(1.0 + sign * self.x * self.x * a, sign * b, -sign * self.x);
        let bt = V3::new(b, sign + self.y * self.y * a, -self.y);
        (t, bt)
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.zip(o, |a, b| a + b)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.zip(o, |a, b| a - b)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.map(|c| -c)
    }
}

impl Mul<f64> for V3 {
    type Output = V3;
    fn mul(self, s: f64) -> V3 {
        self.map(|c| c * s)
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: V3, max: V3) -> Self {
        Self { min: min.to_array(), max: max.to_array() }
    }

    pub fn empty() -> Self {
        Self { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }

    pub fn lo(&self) -> V3 {
        V3::from_array(self.min)
    }

    pub fn hi(&self) -> V3 {
        V3::from_array(self.max)
    }

    pub fn extent(&self) -> V3 {
        self.hi() - self.lo()
    }

    pub fn center(&self) -> V3 {
        (self.lo() + self.hi()) * 0.5
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|i| !(self.max[i] > self.min[i]) || !self.min[i].is_finite() || !self.max[i].is_finite())
    }

    pub fn grow(&mut self, p: V3) {
        for i in 0..3 {
            self.min[i] = self.min[i].min(p[i]);
            self.max[i] = self.max[i].max(p[i]);
        }
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        let mut r = *self;
        for i in 0..3 {
            r.min[i] = r.min[i].min(o.min[i]);
            r.max[i] = r.max[i].max(o.max[i]);
        }
        r
    }

    pub fn contains_box(&self, o: &Aabb) -> bool {
        (0..3).all(|i| o.min[i] >= self.min[i] && o.max[i] <= self.max[i])
    }

    pub fn contains(&self, p: V3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Clamp a point into the box; the flag reports whether clamping happened.
    pub fn clamp_point(&self, p: V3) -> (V3, bool) {
        let c = V3::new(
            p.x.clamp(self.min[0], self.max[0]),
            p.y.clamp(self.min[1], self.max[1]),
            p.z.clamp(self.min[2], self.max[2]),
        );
        (c, c != p)
    }

    /// Slab test; returns the parametric overlap `[t0, t1]` with the ray if any.
    pub fn intersect_ray(&self, o: V3, d: V3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let inv = 1.0 / d[i];
            let mut a = (self.min[i] - o[i]) * inv;
            let mut b = (self.max[i] - o[i]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            // NaN from 0 * inf (origin on a slab plane, parallel ray) keeps the old bound.
            if a > t0 {
                t0 = a;
            }
            if b < t1 {
                t1 = b;
            }
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Row-major 4x4 rigid or affine transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat4(pub [f64; 16]);

impl Mat4 {
    pub const IDENTITY: Mat4 =
        Mat4([1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.0[r * 4 + c]
    }

    pub fn transform_point(&self, p: V3) -> V3 {
        let m = &self.0;
        V3::new(
            m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
            m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
            m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11],
        )
    }

    pub fn transform_vector(&self, v: V3) -> V3 {
        let m = &self.0;
        V3::new(
            m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[4] * v.x + m[5] * v.y + m[6] * v.z,
            m[8] * v.x + m[9] * v.y + m[10] * v.z,
        )
    }

    pub fn translation(&self) -> V3 {
        V3::new(self.0[3], self.0[7], self.0[11])
    }

    /// Largest deviation of the upper-left 3x3 block from an orthonormal matrix.
    pub fn rotation_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.at(k, i) * self.at(k, j)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }

    /// World-from-camera pose looking from `eye` at `target` (camera +z forward, +y down).
    pub fn look_at(eye: V3, target: V3, up: V3) -> Mat4 {
        let f = (target - eye).normalized();
        let r = f.cross(up).normalized();
        let d = f.cross(r);
        Mat4([
            r.x, d.x, f.x, eye.x, //
            r.y, d.y, f.y, eye.y, //
            r.z, d.z, f.z, eye.z, //
            0.0, 0.0, 0.0, 1.0,
        ])
    }
}

/// Direction on the unit sphere for equirectangular coordinates; `theta` is
/// measured from +z, `phi` counter-clockwise from +x.
pub fn sphere_dir(theta: f64, phi: f64) -> V3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    V3::new(st * cp, st * sp, ct)
}

/// Inverse of [`sphere_dir`]; `phi` is wrapped into `[0, 2pi)`.
pub fn dir_to_sphere(d: V3) -> (f64, f64) {
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let mut phi = d.y.atan2(d.x);
    if phi < 0.0 {
        phi += std::f64::consts::TAU;
    }
    if phi >= std::f64::consts::TAU {
        phi = 0.0;
    }
    (theta, phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_is_orthonormal() {
        for d in [V3::Z, V3::new(0.0, 0.0, -1.0), V3::new(1.0, 2.0, -3.0).normalized()] {
            let (t, b) = d.frame();
            assert!((t.length() - 1.0).abs() < 1e-12);
            assert!((b.length() - 1.0).abs() < 1e-12);
            assert!(t.dot(d).abs() < 1e-12 && b.dot(d).abs() < 1e-12 && t.dot(b).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_roundtrip() {
        let d = V3::new(-0.3, 0.4, 0.2).normalized();
        let (t, p) = dir_to_sphere(d);
        let e = sphere_dir(t, p);
        assert!((e - d).length() < 1e-12);
    }

    #[test]
    fn look_at_is_rigid() {
        let m = Mat4::look_at(V3::new(2.0, 1.0, 3.0), V3::ZERO, V3::Z);
        assert!(m.rotation_error() < 1e-12);
        let fwd = m.transform_vector(V3::Z);
        assert!((fwd - (V3::ZERO - V3::new(2.0, 1.0, 3.0)).normalized()).length() < 1e-12);
    }

    #[test]
    fn slab_hits_and_misses() {
        let b = Aabb::new(V3::splat(-1.0), V3::splat(1.0));
        let (t0, t1) = b.intersect_ray(V3::new(-3.0, 0.0, 0.0), V3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((t0, t1), (2.0, 4.0));
        assert!(b.intersect_ray(V3::new(-3.0, 2.0, 0.0), V3::new(1.0, 0.0, 0.0)).is_none());
    }
}
