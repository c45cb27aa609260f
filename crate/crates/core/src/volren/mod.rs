//! Volumetric rendering of primary rays through the SDF into a G-buffer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gradcore::{sigmoid, Ctx, Scalar};
use crate::image::Image;
use crate::math::{Vec3, V3};
use crate::nfield::Model;
use crate::sceneio::Camera;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub o: V3,
    pub d: V3,
    pub t_near: f64,
    pub t_far: f64,
    pub pixel: (u32, u32),
    pub image: usize,
}

impl Ray {
    /// Ray clipped to the model bounds; `None` when it misses them.
    pub fn clipped(o: V3, d: V3, model: &Model, pixel: (u32, u32), image: usize) -> Option<Ray> {
        let (t0, t1) = model.bounds().intersect_ray(o, d)?;
        let t0 = t0.max(0.0);
        (t1 > t0 + 1e-9).then_some(Ray { o, d, t_near: t0, t_far: t1, pixel, image })
    }

    pub fn at(&self, t: f64) -> V3 {
        self.o + self.d * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarchConfig {
    pub n_uniform: usize,
    pub n_adaptive: usize,
    /// Random offset of the uniform sample comb (otherwise cell centres).
    pub jitter: bool,
    /// Segments with compositing weight at or below this skip payload networks.
    pub weight_floor: f64,
    /// Accumulated alpha below which a pixel counts as background.
    pub a_min: f64,
}

impl Default for MarchConfig {
    fn default() -> Self {
        MarchConfig { n_uniform: 512, n_adaptive: 64, jitter: true, weight_floor: 1e-4, a_min: 0.5 }
    }
}

/// Continuous opaque density `max(-(dPhi/dt)/Phi, 0)` for SDF value `s` with
/// derivative `ds_dt` along the ray.
pub fn sdf_to_density(s: f64, ds_dt: f64, kappa: f64) -> f64 {
    let phi = sigmoid(kappa * s);
    (-kappa * (1.0 - phi) * ds_dt).max(0.0)
}

/// Discrete opacity of the segment between SDF samples `s0` and `s1`.
pub fn segment_alpha<S: Scalar>(s0: S, s1: S, kappa: S) -> S {
    let p0 = (kappa * s0).sigmoid();
    if p0.value() <= 0.0 {
        return p0.lift(0.0);
    }
    let p1 = (kappa * s1).sigmoid();
    ((p0 - p1) / p0).relu()
}

/// Compositing weights `T_j alpha_j`.
pub fn composite_weights<S: Scalar>(alphas: &[S]) -> Vec<S> {
    let mut out = Vec::with_capacity(alphas.len());
    let Some(&first) = alphas.first() else { return out };
    let mut trans = first.lift(1.0);
    for &a in alphas {
        out.push(trans * a);
        trans = trans * a.rsub(1.0);
    }
    out
}

/// `(sum_j T_j alpha_j c_j, sum_j T_j alpha_j)`. Panics on an empty ray.
pub fn composite<S: Scalar>(alphas: &[S], payload: &[S]) -> (S, S) {
    assert_eq!(alphas.len(), payload.len());
    assert!(!alphas.is_empty(), "composite of an empty sample set");
    let w = composite_weights(alphas);
    let zero = alphas[0].lift(0.0);
    let mut v = zero;
    let mut a = zero;
    for (wj, &c) in w.iter().zip(payload) {
        v = v + *wj * c;
        a = a + *wj;
    }
    (v, a)
}

/// `n` depths drawn from the piecewise-constant density given by `weights`
/// over `[edges[j], edges[j+1]]`, stratified with offset `xi`. Falls back to
/// uniform spacing when all weights vanish.
pub fn adaptive_resample(edges: &[f64], weights: &[f64], n: usize, xi: f64) -> Vec<f64> {
    assert_eq!(edges.len(), weights.len() + 1);
    if n == 0 || weights.is_empty() {
        return Vec::new();
    }
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let (lo, hi) = (edges[0], *edges.last().unwrap());
    if total <= 0.0 || !total.is_finite() {
        return (0..n).map(|i| lo + (hi - lo) * (i as f64 + xi) / n as f64).collect();
    }
    let mut cdf = Vec::with_capacity(weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in weights {
        acc += w.max(0.0) / total;
        cdf.push(acc);
    }
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let u = ((i as f64 + xi) / n as f64).min(1.0 - 1e-12);
        while j + 1 < weights.len() && cdf[j + 1] <= u {
            j += 1;
        }
        let span = cdf[j + 1] - cdf[j];
        let f = if span > 0.0 { ((u - cdf[j]) / span).clamp(0.0, 1.0) } else { 0.5 };
        out.push(edges[j] + f * (edges[j + 1] - edges[j]));
    }
    out
}

/// Frozen sampling decisions for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub depths: Vec<f64>,
    /// Per segment: evaluate payload networks.
    pub active: Vec<bool>,
}

/// Result of marching one ray in some evaluation context.
#[derive(Debug, Clone)]
pub struct March<S> {
    pub depths: Vec<f64>,
    pub sdf: Vec<S>,
    pub alphas: Vec<S>,
    pub weights: Vec<S>,
    pub mids: Vec<f64>,
    pub active: Vec<bool>,
    /// Accumulated alpha.
    pub a: S,
    /// Radial depth `sum w_j t_mid_j`.
    pub depth: S,
}

impl<S: Scalar> March<S> {
    /// Surface point `o + (D/A) d`, when the ray is not empty.
    pub fn surface_point(&self, ray: &Ray) -> Option<V3> {
        let a = self.a.value();
        (a > 1e-6).then(|| ray.at(self.depth.value() / a))
    }
}

/// Evaluate SDF samples, alphas and weights along `ray`. A missing plan is
/// created from the current values and stored.
pub fn march<C: Ctx>(c: &C, model: &Model, ray: &Ray, cfg: &MarchConfig, plan: &mut Option<SamplePlan>, rng: &mut impl Rng) -> March<C::S> {
    let kappa = model.kappa(c);
    let k = kappa.value();
    let (depths, sdf) = match plan {
        Some(p) => {
            let sdf: Vec<C::S> = p.depths.iter().map(|&t| model.sdf(c, ray.at(t)).0).collect();
            (p.depths.clone(), sdf)
        }
        None => {
            let n = cfg.n_uniform.max(2);
            let span = ray.t_far - ray.t_near;
            let off = if cfg.jitter { rng.random::<f64>() } else { 0.5 };
            let uni: Vec<f64> = (0..n).map(|i| ray.t_near + span * (i as f64 + off) / n as f64).collect();
            let s_uni: Vec<C::S> = uni.iter().map(|&t| model.sdf(c, ray.at(t)).0).collect();
            let mut samples: Vec<(f64, C::S)> = uni.iter().copied().zip(s_uni.iter().copied()).collect();
            if cfg.n_adaptive > 0 {
                let alphas: Vec<f64> = s_uni.windows(2).map(|w| segment_alpha(w[0].value(), w[1].value(), k)).collect();
                let weights = composite_weights(&alphas);
                let extra = adaptive_resample(&uni, &weights, cfg.n_adaptive, rng.random::<f64>());
                for t in extra {
                    samples.push((t, model.sdf(c, ray.at(t)).0));
                }
                samples.sort_by(|a, b| a.0.total_cmp(&b.0));
                samples.dedup_by(|a, b| a.0 == b.0);
            }
            (samples.iter().map(|s| s.0).collect(), samples.iter().map(|s| s.1).collect())
        }
    };
    let alphas: Vec<C::S> = sdf.windows(2).map(|w| segment_alpha(w[0], w[1], kappa)).collect();
    let weights = composite_weights(&alphas);
    let mids: Vec<f64> = depths.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    if plan.is_none() {
        let active = weights.iter().map(|w| w.value() > cfg.weight_floor).collect();
        *plan = Some(SamplePlan { depths: depths.clone(), active });
    }
    let active = plan.as_ref().unwrap().active.clone();
    let mut a = c.constant(0.0);
    let mut depth = c.constant(0.0);
    for (w, &t) in weights.iter().zip(&mids) {
        a = a + *w;
        depth = depth + *w * t;
    }
    March { depths, sdf, alphas, weights, mids, active, a, depth }
}

/// Composited surface attributes of one ray.
#[derive(Debug, Clone, Copy)]
pub struct GSample<S> {
    pub a: S,
    pub depth: S,
    pub kd: Vec3<S>,
    pub ks: [S; 2],
    /// Composited then renormalized normal.
    pub n: Vec3<S>,
    pub degenerate_normal: bool,
}

/// Composite material and normal payloads over the active segments.
pub fn gbuffer_sample<C: Ctx>(c: &C, model: &Model, ray: &Ray, m: &March<C::S>) -> GSample<C::S> {
    let z = c.constant(0.0);
    let mut kd = Vec3::new(z, z, z);
    let mut ks = [z, z];
    let mut n = Vec3::new(z, z, z);
    for j in 0..m.mids.len() {
        if !m.active[j] {
            continue;
        }
        let x = ray.at(m.mids[j]);
        let w = m.weights[j];
        let (kdj, ksj) = model.material(c, x);
        let (nj, _) = model.normal_field(c, x);
        kd = kd + kdj.scale(w);
        ks = [ks[0] + ksj[0] * w, ks[1] + ksj[1] * w];
        n = n + nj.scale(w);
    }
    let len = n.length();
    let (n, degenerate_normal) = if len.value() > 1e-9 {
        (n.scale(len.recip()), false)
    } else {
        (Vec3::new(z, z, c.constant(1.0)), true)
    };
    GSample { a: m.a, depth: m.depth, kd, ks, n, degenerate_normal }
}

/// Radiance-field colour composited with the same weights.
pub fn radiance_sample<C: Ctx>(c: &C, model: &Model, ray: &Ray, m: &March<C::S>) -> Vec3<C::S> {
    let z = c.constant(0.0);
    let mut acc = Vec3::new(z, z, z);
    for j in 0..m.mids.len() {
        if m.active[j] {
            acc = acc + model.radiance(c, ray.at(m.mids[j]), ray.d).scale(m.weights[j]);
        }
    }
    acc
}

/// Per-pixel buffers of one view.
#[derive(Debug, Clone)]
pub struct GBuffer {
    pub normal: Image,
    pub base_color: Image,
    /// metallic, roughness
    pub material: Image,
    pub depth: Image,
    pub alpha: Image,
    /// Pixel has `A >= a_min`.
    pub foreground: Vec<bool>,
}

impl GBuffer {
    pub fn new(w: usize, h: usize) -> GBuffer {
        GBuffer {
            normal: Image::new(w, h, 3),
            base_color: Image::new(w, h, 3),
            material: Image::new(w, h, 2),
            depth: Image::new(w, h, 1),
            alpha: Image::new(w, h, 1),
            foreground: vec![false; w * h],
        }
    }
}

/// Deterministic plain-evaluation G-buffer of a camera view.
pub fn render_gbuffer(model: &Model, cam: &Camera, cfg: &MarchConfig, seed: u64) -> GBuffer {
    let (w, h) = (cam.width, cam.height);
    let mut g = GBuffer::new(w, h);
    let c = model.plain();
    for py in 0..h {
        for px in 0..w {
            let (o, d) = cam.ray(px as f64 + 0.5, py as f64 + 0.5);
            let Some(ray) = Ray::clipped(o, d, model, (px as u32, py as u32), 0) else { continue };
            let mut rng = crate::rng::pixel_rng(seed, 0, px, py, 0);
            let m = march(&c, model, &ray, cfg, &mut None, &mut rng);
            let s = gbuffer_sample(&c, model, &ray, &m);
            g.normal.set_rgb(px, py, s.n);
            g.base_color.set_rgb(px, py, s.kd);
            g.material.set(px, py, 0, s.ks[0]);
            g.material.set(px, py, 1, s.ks[1]);
            g.depth.set(px, py, 0, s.depth);
            g.alpha.set(px, py, 0, s.a);
            g.foreground[py * w + px] = s.a >= cfg.a_min;
        }
    }
    g
}

/// Radiance-field image of a camera view (black background).
pub fn render_radiance(model: &Model, cam: &Camera, cfg: &MarchConfig, seed: u64) -> Image {
    let mut img = Image::new(cam.width, cam.height, 3);
    let c = model.plain();
    for py in 0..cam.height {
        for px in 0..cam.width {
            let (o, d) = cam.ray(px as f64 + 0.5, py as f64 + 0.5);
            let Some(ray) = Ray::clipped(o, d, model, (px as u32, py as u32), 0) else { continue };
            let mut rng = crate::rng::pixel_rng(seed, 0, px, py, 0);
            let m = march(&c, model, &ray, cfg, &mut None, &mut rng);
            img.set_rgb(px, py, radiance_sample(&c, model, &ray, &m));
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_examples() {
        assert_eq!(sdf_to_density(0.3, 0.0, 5.0), 0.0);
        assert_eq!(sdf_to_density(0.3, 1.0, 5.0), 0.0);
        assert!((sdf_to_density(0.0, -1.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(segment_alpha(0.2, 0.2, 10.0), 0.0);
        let a = segment_alpha(0.1, -0.1, 10.0);
        let want = (sigmoid(1.0) - sigmoid(-1.0)) / sigmoid(1.0);
        assert!((a - want).abs() < 1e-15);
        assert!((a - 0.6322).abs() < 1e-4);
        assert_eq!(segment_alpha(-0.1, 0.1, 10.0), 0.0);
        assert_eq!(segment_alpha(-1e4, -1e4 - 1.0, 10.0), 0.0);
    }

    #[test]
    fn composite_examples() {
        let (v, a) = composite(&[1.0], &[0.7]);
        assert_eq!((v, a), (0.7, 1.0));
        let (v, a) = composite(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]);
        assert_eq!((v, a), (0.0, 0.0));
        let (v, a) = composite(&[0.5, 0.5], &[1.0, 0.0]);
        assert_eq!((v, a), (0.5, 0.75));
    }

    #[test]
    fn splitting_empty_segment_is_exact() {
        let (v1, a1) = composite(&[0.3, 0.0, 0.6], &[0.2, 0.9, 0.4]);
        let (v2, a2) = composite(&[0.3, 0.0, 0.0, 0.6], &[0.2, 0.9, 0.9, 0.4]);
        assert_eq!((v1, a1), (v2, a2));
    }

    #[test]
    fn resample_degenerate_and_uniform() {
        let edges: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let mut w = vec![0.0; 10];
        w[3] = 1.0;
        let s = adaptive_resample(&edges, &w, 64, 0.5);
        assert!(s.iter().all(|&t| (3.0..=4.0).contains(&t)));
        let z = adaptive_resample(&edges, &[0.0; 10], 20, 0.5);
        assert!((z[1] - z[0] - 0.5).abs() < 1e-12);
        let u = adaptive_resample(&edges, &[1.0; 10], 100, 0.5);
        let mut hist = [0usize; 10];
        for t in u {
            hist[(t.floor() as usize).min(9)] += 1;
        }
        // chi-square with 9 dof at p = 0.01 is 21.67
        let chi: f64 = hist.iter().map(|&h| (h as f64 - 10.0).powi(2) / 10.0).sum();
        assert!(chi < 21.67);
    }
}
