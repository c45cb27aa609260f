//! Loss terms. Each has a per-item form used by the training step (which
//! applies its own normalizers) and a batch-mean form.

use serde::{Deserialize, Serialize};

use crate::gradcore::Scalar;
use crate::math::{Vec3, V3};
use crate::nfield::SemanticClass;

/// Clamp of accumulated alpha inside the cross entropy.
pub const BCE_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub depth: f64,
    pub render: f64,
    pub rad: f64,
    pub norm: f64,
    pub shade: f64,
    pub eikonal: f64,
    pub skymask: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { depth: 1.0, render: 1.0, rad: 1.0, norm: 1.0, shade: 0.1, eikonal: 0.05, skymask: 0.01, smooth: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Main,
}

/// Values of every loss term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub render: f64,
    pub rad: f64,
    pub depth: f64,
    pub norm: f64,
    pub shade: f64,
    pub eikonal: f64,
    pub skymask: f64,
    pub smooth: f64,
}

pub const TERM_NAMES: [&str; 8] = ["render", "rad", "depth", "norm", "shade", "eikonal", "skymask", "smooth"];

impl LossTerms {
    pub fn as_array(&self) -> [f64; 8] {
        [self.render, self.rad, self.depth, self.norm, self.shade, self.eikonal, self.skymask, self.smooth]
    }

    pub fn from_array(a: [f64; 8]) -> LossTerms {
        LossTerms { render: a[0], rad: a[1], depth: a[2], norm: a[3], shade: a[4], eikonal: a[5], skymask: a[6], smooth: a[7] }
    }
}

impl LossWeights {
    /// Effective weights in a phase: warm-up drops render and shade.
    pub fn effective(&self, phase: Phase) -> [f64; 8] {
        let w = [self.render, self.rad, self.depth, self.norm, self.shade, self.eikonal, self.skymask, self.smooth];
        match phase {
            Phase::Main => w,
            Phase::Warmup => {
                let mut w = w;
                w[0] = 0.0;
                w[4] = 0.0;
                w
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let w = self.effective(Phase::Main);
        match w.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            Some(i) => Err(format!("loss weight `{}` must be finite and non-negative", TERM_NAMES[i])),
            None => Ok(()),
        }
    }
}

/// Weighted sum of the terms.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights, phase: Phase) -> f64 {
    weights.effective(phase).iter().zip(terms.as_array()).map(|(w, t)| w * t).sum()
}

/// Channel-mean absolute difference of one colour.
pub fn l1_rgb<S: Scalar>(pred: Vec3<S>, gt: V3) -> S {
    ((pred.x - gt.x).abs() + (pred.y - gt.y).abs() + (pred.z - gt.z).abs()) * (1.0 / 3.0)
}

/// Target values at or above this are clipped captures.
pub const WHITE: f64 = 254.5 / 255.0;

/// L1 error of an HDR prediction against an LDR target. A channel is
/// tonemapped as usual where the target is clipped; elsewhere the gamma
/// curve continues past white, so an overexposed prediction still has a
/// gradient pulling it back.
pub fn l1_ldr<S: Scalar>(hdr: Vec3<S>, gt: V3, gamma: f64) -> S {
    let ch = |x: S, g: f64| {
        let t = if g >= WHITE { x.clamp(0.0, 1.0) } else { x.relu() };
        (t.powf(1.0 / gamma) - g).abs()
    };
    (ch(hdr.x, gt.x) + ch(hdr.y, gt.y) + ch(hdr.z, gt.z)) * (1.0 / 3.0)
}

/// Mean over the batch of the channelwise L1 error.
pub fn loss_l1<S: Scalar>(pred: &[Vec3<S>], gt: &[V3]) -> Option<S> {
    assert_eq!(pred.len(), gt.len());
    let first = pred.first()?;
    let mut acc = first.x.lift(0.0);
    for (p, g) in pred.iter().zip(gt) {
        acc = acc + l1_rgb(*p, *g);
    }
    Some(acc / pred.len() as f64)
}

/// Mean absolute depth error; 0 for an empty set.
pub fn loss_depth(depth: &[f64], gt: &[f64]) -> f64 {
    assert_eq!(depth.len(), gt.len());
    if depth.is_empty() {
        return 0.0;
    }
    depth.iter().zip(gt).map(|(d, g)| (d - g).abs()).sum::<f64>() / depth.len() as f64
}

/// Angle between two unit normals, insensitive to sign.
pub fn angle_term<S: Scalar>(n_sdf: Vec3<S>, n: Vec3<S>) -> S {
    n_sdf.dot(n).abs().clamp(0.0, 1.0).acos()
}

/// Squared deviation of the gradient norm from 1.
pub fn eikonal_term<S: Scalar>(grad: Vec3<S>) -> S {
    (grad.length() - 1.0).square()
}

/// Cross entropy of clamped alpha against `non_sky`.
pub fn bce_term<S: Scalar>(a: S, non_sky: bool) -> S {
    let a = a.clamp(BCE_DELTA, 1.0 - BCE_DELTA);
    if non_sky {
        -a.ln()
    } else {
        -a.rsub(1.0).ln()
    }
}

/// `mean_c |a_c - b_c|` for one attribute pair of the smoothness term.
pub fn abs_diff_mean<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = a[0].lift(0.0);
    for (x, y) in a.iter().zip(b) {
        acc = acc + (*x - *y).abs();
    }
    acc / a.len() as f64
}

/// Mean over active classes present in the batch of the per-class mean L1
/// error between `albedo_b * s_diffuse` (after `post`) and the target.
pub fn loss_shade(items: &[(SemanticClass, V3, V3)], albedo: &dyn Fn(SemanticClass) -> V3, active: &[SemanticClass], post: &dyn Fn(V3) -> V3) -> f64 {
    let mut total = 0.0;
    let mut classes = 0;
    for &b in active {
        let rows: Vec<_> = items.iter().filter(|it| it.0 == b).collect();
        if rows.is_empty() {
            continue;
        }
        let k = albedo(b);
        let m: f64 = rows.iter().map(|(_, s, gt)| l1_rgb(post(k.mul_elem(*s)), *gt)).sum::<f64>() / rows.len() as f64;
        total += m;
        classes += 1;
    }
    if classes == 0 {
        0.0
    } else {
        total / classes as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ldr_loss_keeps_a_gradient_above_white() {
        let gt = V3::new(0.5, 1.0, 0.0);
        let at = |x: f64| l1_ldr(Vec3::new(x, x, x), gt, 2.2);
        // matches the tonemapped L1 below white
        let below: f64 = 0.3;
        let t = below.powf(1.0 / 2.2);
        assert!((at(below) - ((t - 0.5).abs() + (t - 1.0).abs() + t) / 3.0).abs() < 1e-15);
        // above white only the unclipped channels keep growing
        let d = (at(4.0) - at(2.0)) * 3.0;
        assert!((d - (4f64.powf(1.0 / 2.2) - 2f64.powf(1.0 / 2.2)) * 2.0).abs() < 1e-12, "{d}");
    }

    #[test]
    fn l1_examples() {
        let a = [V3::splat(0.2), V3::new(0.5, 0.1, 0.9)];
        assert_eq!(loss_l1(&a, &a), Some(0.0));
        let b: Vec<V3> = a.iter().map(|&v| v + V3::splat(0.1)).collect();
        assert!((loss_l1(&a, &b).unwrap() - 0.1).abs() < 1e-15);
        let ar = [a[1], a[0]];
        let br = [b[1], b[0]];
        assert_eq!(loss_l1(&a, &b), loss_l1(&ar, &br));
    }

    #[test]
    fn depth_examples() {
        assert_eq!(loss_depth(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(loss_depth(&[1.5, 2.5], &[1.0, 2.0]), 0.5);
        assert_eq!(loss_depth(&[], &[]), 0.0);
    }

    #[test]
    fn angle_examples() {
        let n = V3::new(0.0, 0.6, 0.8);
        assert!(angle_term(n, n).abs() < 1e-7);
        assert!(angle_term(n, -n).abs() < 1e-7);
        assert!((angle_term(n, V3::new(1.0, 0.0, 0.0)) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn eikonal_examples() {
        assert_eq!(eikonal_term(V3::new(0.6, 0.8, 0.0)), 0.0);
        assert!((eikonal_term(V3::new(1.2, 1.6, 0.0)) - 1.0).abs() < 1e-12);
        assert_eq!(eikonal_term(V3::ZERO), 1.0);
    }

    #[test]
    fn bce_examples() {
        assert!(bce_term(1.0, true) < 2e-4);
        assert!(bce_term(0.0, false) < 2e-4);
        assert!((bce_term(0.5, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_term(0.0, true) > bce_term(0.5, true));
    }

    #[test]
    fn total_examples() {
        let ones = LossTerms::from_array([1.0; 8]);
        let w = LossWeights::default();
        assert!((total_loss(&ones, &w, Phase::Main) - 4.17).abs() < 1e-12);
        assert!((total_loss(&ones, &w, Phase::Warmup) - 3.07).abs() < 1e-12);
        let zero = LossWeights { depth: 0.0, render: 0.0, rad: 0.0, norm: 0.0, shade: 0.0, eikonal: 0.0, skymask: 0.0, smooth: 0.0 };
        assert_eq!(total_loss(&ones, &zero, Phase::Main), 0.0);
    }

    #[test]
    fn shade_examples() {
        let kd = |_| V3::splat(0.5);
        let id = |v: V3| v;
        let items = [(SemanticClass::Road, V3::splat(1.0), V3::splat(0.5))];
        assert_eq!(loss_shade(&items, &kd, &SemanticClass::DEFAULT_ACTIVE, &id), 0.0);
        let items = [(SemanticClass::Road, V3::splat(1.0), V3::splat(0.7)), (SemanticClass::Road, V3::splat(1.0), V3::splat(0.3))];
        assert!((loss_shade(&items, &kd, &SemanticClass::DEFAULT_ACTIVE, &id) - 0.2).abs() < 1e-15);
        // inactive classes are ignored
        let items = [(SemanticClass::Sky, V3::splat(1.0), V3::splat(0.0))];
        assert_eq!(loss_shade(&items, &kd, &SemanticClass::DEFAULT_ACTIVE, &id), 0.0);
    }
}
