//! Deferred Monte Carlo shading of G-buffer pixels under an HDR sky with
//! mesh visibility.
//!
//! Shading a pixel happens in two steps. [`plan_shading`] draws the sample
//! directions, their MIS densities and visibility bits from the current
//! values. [`eval_plan`] then evaluates the estimator for given surface
//! attributes and sky texels; when recording it is spliced into the tape
//! as one linearized operation whose Jacobian comes from dual numbers.

mod brdf;
mod env;

pub use brdf::{
    brdf_eval, brdf_pdf, cosine_sample, fresnel_schlick, ggx_d, ggx_sample_half, sample_brdf, smith_v, specular_probability,
    BrdfSample, Lobe, ALPHA_MIN, F0_DIELECTRIC,
};
pub use env::{EnvMap, EnvTable, Taps};

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geomesh::{visibility, Occluder};
use crate::gradcore::{Ctx, Dual, Scalar};
use crate::math::{Vec3, V3};

use brdf::dot_c;

/// Smallest MIS denominator.
pub const PDF_FLOOR: f64 = 1e-8;

/// Balance heuristic.
pub fn mis_weight(p_a: f64, p_b: f64) -> f64 {
    if p_a + p_b <= 0.0 {
        0.0
    } else {
        p_a / (p_a + p_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Half the samples from each strategy, balance heuristic.
    Mis,
    Brdf,
    Env,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadingConfig {
    /// Secondary rays per pixel over both strategies.
    pub samples: usize,
    pub seed: u64,
    pub exposure: bool,
    pub gamma: f64,
    pub strategy: Strategy,
}

impl Default for ShadingConfig {
    fn default() -> Self {
        ShadingConfig { samples: 512, seed: 0, exposure: true, gamma: 2.2, strategy: Strategy::Mis }
    }
}

impl ShadingConfig {
    /// `(BRDF samples, environment samples)`.
    pub fn split(&self) -> (usize, usize) {
        match self.strategy {
            Strategy::Mis => {
                let n = self.samples.max(2);
                (n / 2, n - n / 2)
            }
            Strategy::Brdf => (self.samples.max(1), 0),
            Strategy::Env => (0, self.samples.max(1)),
        }
    }
}

/// Sky radiance with its sampling table.
#[derive(Debug, Clone)]
pub struct Lighting {
    pub map: EnvMap,
    pub table: EnvTable,
}

impl Lighting {
    pub fn new(map: EnvMap) -> Lighting {
        let table = EnvTable::build(&map);
        Lighting { map, table }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedSample {
    pub dir: V3,
    /// `n_brdf p_brdf + n_env p_env`, floored.
    pub denom: f64,
    pub vis: f64,
    pub taps: Taps,
}

/// Frozen sampling decisions of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadePlan {
    pub wo: V3,
    pub samples: Vec<PlannedSample>,
    /// The normal was flipped to face the viewer.
    pub flipped: bool,
    /// The normal was unusable; shading used `+z` and no occlusion.
    pub degenerate: bool,
}

/// Surface attributes at a shading point.
#[derive(Debug, Clone, Copy)]
pub struct Surface<S> {
    pub n: Vec3<S>,
    pub kd: Vec3<S>,
    pub metallic: S,
    pub roughness: S,
}

impl Surface<f64> {
    pub fn new(n: V3, kd: V3, metallic: f64, roughness: f64) -> Self {
        Surface { n, kd, metallic, roughness }
    }
}

/// Outgoing radiance and the albedo-free diffuse shading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shaded<S> {
    pub radiance: Vec3<S>,
    pub diffuse: Vec3<S>,
}

/// Draw the secondary rays of a pixel at surface point `x` seen from
/// direction `wo` (pointing back to the camera).
#[allow(clippy::too_many_arguments)]
pub fn plan_shading(
    x: V3,
    wo: V3,
    surf: &Surface<f64>,
    degenerate: bool,
    light: &Lighting,
    occ: &dyn Occluder,
    cfg: &ShadingConfig,
    rng: &mut impl Rng,
) -> ShadePlan {
    let mut n = if degenerate { V3::Z } else { surf.n };
    let flipped = n.dot(wo) < 0.0;
    if flipped {
        n = -n;
    }
    let (nb, ne) = cfg.split();
    let (kd, m, r) = (surf.kd, surf.metallic, surf.roughness);
    let mut samples = Vec::with_capacity(nb + ne);
    let mut push = |dir: V3| {
        let pb = if nb > 0 { brdf_pdf(n, wo, dir, kd, m, r) } else { 0.0 };
        let pe = if ne > 0 { light.table.pdf(dir) } else { 0.0 };
        let denom = (nb as f64 * pb + ne as f64 * pe).max(PDF_FLOOR);
        let vis = if degenerate { 1.0 } else { visibility(x, dir, occ) };
        samples.push(PlannedSample { dir, denom, vis, taps: light.map.taps(dir) });
    };
    for _ in 0..nb {
        let u = [rng.random::<f64>(), rng.random::<f64>()];
        if let Some(s) = sample_brdf(n, wo, kd, m, r, u) {
            push(s.dir);
        }
    }
    for _ in 0..ne {
        let u = [rng.random::<f64>(), rng.random::<f64>()];
        if let Some((dir, _)) = light.table.sample(u) {
            push(dir);
        }
    }
    ShadePlan { wo, samples, flipped, degenerate }
}

/// Per-sample weights: radiance factor `f cos v / denom` and diffuse factor
/// `cos v / (pi denom)`.
fn accumulate<S: Scalar>(plan: &ShadePlan, surf: &Surface<S>, mut each: impl FnMut(&PlannedSample, Vec3<S>, S)) {
    let one = surf.metallic.lift(1.0);
    let zero = surf.metallic.lift(0.0);
    let n = if plan.degenerate {
        Vec3::new(zero, zero, one)
    } else if plan.flipped {
        -surf.n
    } else {
        surf.n
    };
    for s in &plan.samples {
        if s.vis == 0.0 {
            continue;
        }
        let cos = dot_c(n, s.dir);
        if cos.value() <= 0.0 {
            continue;
        }
        let k = s.vis / s.denom;
        let f = brdf_eval(n, plan.wo, s.dir, surf.kd, surf.metallic, surf.roughness);
        let c = cos * k;
        each(s, f.scale(c), c * (1.0 / PI));
    }
}

fn sky_at(taps: &Taps, texel: &dyn Fn(usize) -> f64) -> V3 {
    let mut l = V3::ZERO;
    for &(t, w) in taps {
        if w != 0.0 {
            let t = 3 * t as usize;
            l = l + V3::new(texel(t), texel(t + 1), texel(t + 2)) * w;
        }
    }
    l
}

/// Plain evaluation of a plan against an environment map.
pub fn eval_plan_f64(plan: &ShadePlan, surf: &Surface<f64>, map: &EnvMap) -> Shaded<f64> {
    let texel = |i: usize| map.data[i];
    let mut rad = V3::ZERO;
    let mut dif = V3::ZERO;
    accumulate(plan, surf, |s, f, c| {
        let l = sky_at(&s.taps, &texel);
        rad = rad + f.mul_elem(l);
        dif = dif + l * c;
    });
    Shaded { radiance: rad, diffuse: dif }
}

/// Evaluate a plan in any context. `map` holds the current sky values and
/// `texel(i)` returns channel `i % 3` of sky texel `i / 3` as a context
/// scalar; when recording, gradients reach the surface attributes and every
/// referenced texel.
pub fn eval_plan<C: Ctx>(c: &C, plan: &ShadePlan, surf: &Surface<C::S>, map: &EnvMap, texel: &dyn Fn(usize) -> C::S) -> Shaded<C::S> {
    let values = |i: usize| map.data[i];
    if !c.recording() {
        let sv = Surface {
            n: surf.n.value(),
            kd: surf.kd.value(),
            metallic: surf.metallic.value(),
            roughness: surf.roughness.value(),
        };
        let mut rad = V3::ZERO;
        let mut dif = V3::ZERO;
        accumulate(plan, &sv, |s, f, cc| {
            let l = sky_at(&s.taps, &values);
            rad = rad + f.mul_elem(l);
            dif = dif + l * cc;
        });
        let mut out = Vec::with_capacity(6);
        c.linearized(&[], &[rad.x, rad.y, rad.z, dif.x, dif.y, dif.z], Vec::new(), &mut out);
        return Shaded { radiance: Vec3::new(out[0], out[1], out[2]), diffuse: Vec3::new(out[3], out[4], out[5]) };
    }

    type D = Dual<8>;
    let var = |s: C::S, i| D::variable(s.value(), i);
    let sd = Surface {
        n: Vec3::new(var(surf.n.x, 0), var(surf.n.y, 1), var(surf.n.z, 2)),
        kd: Vec3::new(var(surf.kd.x, 3), var(surf.kd.y, 4), var(surf.kd.z, 5)),
        metallic: var(surf.metallic, 6),
        roughness: var(surf.roughness, 7),
    };
    let zero = D::constant(0.0);
    let mut rad = Vec3::new(zero, zero, zero);
    let mut dif = Vec3::new(zero, zero, zero);
    // texel -> (radiance coefficient per channel, diffuse coefficient)
    let mut coef: HashMap<u32, ([f64; 3], f64)> = HashMap::new();
    let mut order: Vec<u32> = Vec::new();
    accumulate(plan, &sd, |s, f, cc| {
        let l = sky_at(&s.taps, &values);
        rad = rad + Vec3::new(f.x * l.x, f.y * l.y, f.z * l.z);
        dif = dif + Vec3::new(cc * l.x, cc * l.y, cc * l.z);
        for &(t, w) in &s.taps {
            if w == 0.0 {
                continue;
            }
            let e = coef.entry(t).or_insert_with(|| {
                order.push(t);
                ([0.0; 3], 0.0)
            });
            e.0[0] += f.x.v * w;
            e.0[1] += f.y.v * w;
            e.0[2] += f.z.v * w;
            e.1 += cc.v * w;
        }
    });
    let n_in = 8 + 3 * order.len();
    let mut inputs = Vec::with_capacity(n_in);
    inputs.extend([surf.n.x, surf.n.y, surf.n.z, surf.kd.x, surf.kd.y, surf.kd.z, surf.metallic, surf.roughness]);
    for &t in &order {
        for ch in 0..3 {
            inputs.push(texel(3 * t as usize + ch));
        }
    }
    let outs = [rad.x, rad.y, rad.z, dif.x, dif.y, dif.z];
    let mut jac = vec![0.0; 6 * n_in];
    for (o, d) in outs.iter().enumerate() {
        jac[o * n_in..o * n_in + 8].copy_from_slice(&d.d);
    }
    for (j, t) in order.iter().enumerate() {
        let (rc, dc) = coef[t];
        for ch in 0..3 {
            jac[ch * n_in + 8 + 3 * j + ch] = rc[ch];
            jac[(3 + ch) * n_in + 8 + 3 * j + ch] = dc;
        }
    }
    let mut out = Vec::with_capacity(6);
    c.linearized(&inputs, &outs.map(|d| d.v), jac, &mut out);
    Shaded { radiance: Vec3::new(out[0], out[1], out[2]), diffuse: Vec3::new(out[3], out[4], out[5]) }
}

/// Plan and evaluate one pixel.
#[allow(clippy::too_many_arguments)]
pub fn shade_pixel(
    x: V3,
    wo: V3,
    surf: &Surface<f64>,
    degenerate: bool,
    light: &Lighting,
    occ: &dyn Occluder,
    cfg: &ShadingConfig,
    rng: &mut impl Rng,
) -> Shaded<f64> {
    let plan = plan_shading(x, wo, surf, degenerate, light, occ, cfg, rng);
    eval_plan_f64(&plan, surf, &light.map)
}

/// Diffuse shading `s_diffuse` of a pixel (albedo factored out).
#[allow(clippy::too_many_arguments)]
pub fn diffuse_shading(
    x: V3,
    n: V3,
    degenerate: bool,
    light: &Lighting,
    occ: &dyn Occluder,
    cfg: &ShadingConfig,
    rng: &mut impl Rng,
) -> V3 {
    // a white Lambertian surface viewed along the normal
    let surf = Surface::new(n, V3::splat(1.0), 0.0, 1.0);
    let wo = if degenerate { V3::Z } else { n };
    shade_pixel(x, wo, &surf, degenerate, light, occ, cfg, rng).diffuse
}

/// Bilinear sky radiance in any context; `texel` as in [`eval_plan`].
pub fn sky_lookup<S: Scalar>(taps: &Taps, texel: &dyn Fn(usize) -> S) -> Vec3<S> {
    let mut acc: Option<Vec3<S>> = None;
    for &(t, w) in taps {
        if w == 0.0 {
            continue;
        }
        let t = 3 * t as usize;
        let v = Vec3::new(texel(t), texel(t + 1), texel(t + 2)).scale_f(w);
        acc = Some(match acc {
            Some(a) => a + v,
            None => v,
        });
    }
    acc.unwrap_or_else(|| {
        let z = texel(0).lift(0.0);
        Vec3::new(z, z, z)
    })
}

/// HDR colour of a primary ray: shaded foreground over the sky, or the sky
/// attenuated by the accumulated alpha of a background ray.
pub fn composite_pixel<S: Scalar>(alpha: S, shaded: Option<Vec3<S>>, sky: Vec3<S>) -> Vec3<S> {
    let bg = sky.scale(alpha.rsub(1.0));
    match shaded {
        Some(l) => l.scale(alpha) + bg,
        None => bg,
    }
}

/// Channelwise exposure gain in linear HDR.
pub fn apply_exposure<S: Scalar>(c: Vec3<S>, beta: Vec3<S>) -> Vec3<S> {
    c.mul_elem(beta)
}

/// Clip to `[0,1]` then gamma-encode.
pub fn tonemap<S: Scalar>(x: S, gamma: f64) -> S {
    x.clamp(0.0, 1.0).powf(1.0 / gamma)
}

pub fn tonemap_rgb<S: Scalar>(c: Vec3<S>, gamma: f64) -> Vec3<S> {
    Vec3::new(tonemap(c.x, gamma), tonemap(c.y, gamma), tonemap(c.z, gamma))
}

/// Stream of shading random numbers for one pixel (distinct from the
/// primary-ray stream of the same pixel).
pub fn shading_rng(seed: u64, image: usize, px: usize, py: usize, iteration: u64) -> rand_chacha::ChaCha8Rng {
    crate::rng::pixel_rng(seed ^ 0x5EED_5EED_0000_0001, image, px, py, iteration)
}
