//! Lambert plus GGX microfacet reflectance and its importance sampling.

use std::f64::consts::PI;

use crate::gradcore::Scalar;
use crate::math::{Vec3, V3};

/// Normal-incidence reflectance of dielectrics.
pub const F0_DIELECTRIC: f64 = 0.04;
/// Smallest GGX alpha (`roughness^2`) used in evaluation and sampling.
pub const ALPHA_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lobe {
    Diffuse,
    Specular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrdfSample {
    pub dir: V3,
    /// Density of the full lobe mixture at `dir` (solid angle).
    pub pdf: f64,
    pub lobe: Lobe,
}

pub(crate) fn dot_c<S: Scalar>(a: Vec3<S>, b: V3) -> S {
    a.x * b.x + a.y * b.y + a.z * b.z
}

/// Directional albedo of the GGX lobe with unit Fresnel at normal
/// incidence, as a fit over roughness (within 0.002 of quadrature).
pub fn ggx_albedo<S: Scalar>(roughness: S) -> S {
    (roughness.clamp(0.0, 1.0).powf(4.62) * 2.258 + 1.0).recip()
}

/// Weight of the dielectric diffuse lobe: the energy not reflected
/// specularly at normal incidence.
pub fn diffuse_weight<S: Scalar>(roughness: S) -> S {
    (ggx_albedo(roughness) * F0_DIELECTRIC).rsub(1.0)
}

/// Schlick's approximation.
pub fn fresnel_schlick<S: Scalar>(f0: S, cos: f64) -> S {
    let w = (1.0 - cos.clamp(0.0, 1.0)).powi(5);
    f0 * (1.0 - w) + w
}

fn alpha<S: Scalar>(roughness: S) -> S {
    let a = roughness * roughness;
    if a.value() < ALPHA_MIN {
        a.lift(ALPHA_MIN)
    } else {
        a
    }
}

fn alpha_f(roughness: f64) -> f64 {
    (roughness * roughness).max(ALPHA_MIN)
}

/// GGX normal distribution.
pub fn ggx_d<S: Scalar>(noh: S, a: S) -> S {
    let a2 = a * a;
    let t = noh * noh * (a2 - 1.0) + 1.0;
    a2 / (t * t * PI)
}

/// Height-correlated Smith visibility `G / (4 n.l n.v)`.
pub fn smith_v<S: Scalar>(nol: S, nov: S, a: S) -> S {
    let a2 = a * a;
    let gv = nol * (nov * nov * a2.rsub(1.0) + a2).sqrt();
    let gl = nov * (nol * nol * a2.rsub(1.0) + a2).sqrt();
    (gv + gl).recip() * 0.5
}

/// Reflectance for light arriving from `wi` and leaving towards `wo`;
/// zero when either direction is below the surface.
pub fn brdf_eval<S: Scalar>(n: Vec3<S>, wo: V3, wi: V3, kd: Vec3<S>, metallic: S, roughness: S) -> Vec3<S> {
    let nol = dot_c(n, wi);
    let nov = dot_c(n, wo);
    if nol.value() <= 0.0 || nov.value() <= 0.0 {
        let z = nol.lift(0.0);
        return Vec3::new(z, z, z);
    }
    let h = (wo + wi).normalized();
    let noh = dot_c(n, h);
    let voh = wo.dot(h);
    let a = alpha(roughness);
    let dv = ggx_d(noh, a) * smith_v(nol, nov, a);
    let diffuse = metallic.rsub(1.0) * diffuse_weight(roughness) * (1.0 / PI);
    let one_m = metallic.rsub(1.0) * F0_DIELECTRIC;
    let ch = |k: S| {
        let f0 = k * metallic + one_m;
        k * diffuse + dv * fresnel_schlick(f0, voh)
    };
    Vec3::new(ch(kd.x), ch(kd.y), ch(kd.z))
}

/// Probability of choosing the specular lobe, from the lobe albedos.
pub fn specular_probability(kd: V3, metallic: f64, roughness: f64) -> f64 {
    let f0 = (kd * metallic + V3::splat(F0_DIELECTRIC * (1.0 - metallic))).luminance();
    let d = (1.0 - metallic) * diffuse_weight(roughness) * kd.luminance();
    if f0 + d <= 0.0 {
        return 0.5;
    }
    (f0 / (f0 + d)).clamp(0.1, 0.9)
}

fn to_world(n: V3, l: V3) -> V3 {
    let (t, b) = n.frame();
    t * l.x + b * l.y + n * l.z
}

/// Cosine-weighted hemisphere direction by the inverse CDF
/// `r = sqrt(u0), phi = 2 pi u1`.
pub fn cosine_sample(n: V3, u: [f64; 2]) -> V3 {
    let r = u[0].sqrt();
    let phi = 2.0 * PI * u[1];
    to_world(n, V3::new(r * phi.cos(), r * phi.sin(), (1.0 - u[0]).max(0.0).sqrt()))
}

/// GGX half vector with density `D(h) (n.h)`.
pub fn ggx_sample_half(n: V3, alpha: f64, u: [f64; 2]) -> V3 {
    let t2 = alpha * alpha * u[0] / (1.0 - u[0]).max(1e-300);
    let cos_t = 1.0 / (1.0 + t2).sqrt();
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = 2.0 * PI * u[1];
    to_world(n, V3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t))
}

fn reflect(wo: V3, h: V3) -> V3 {
    h * (2.0 * wo.dot(h)) - wo
}

/// Mixture density of [`sample_brdf`] at `wi`.
pub fn brdf_pdf(n: V3, wo: V3, wi: V3, kd: V3, metallic: f64, roughness: f64) -> f64 {
    let nol = n.dot(wi);
    if nol <= 0.0 || n.dot(wo) <= 0.0 {
        return 0.0;
    }
    let ps = specular_probability(kd, metallic, roughness);
    let h = (wo + wi).normalized();
    let voh = wo.dot(h);
    let spec = if voh > 0.0 {
        let noh = n.dot(h).max(0.0);
        ggx_d(noh, alpha_f(roughness)) * noh / (4.0 * voh)
    } else {
        0.0
    };
    (1.0 - ps) * nol / PI + ps * spec
}

/// Draw a direction from the lobe mixture. `u[0]` first selects the lobe
/// and is then rescaled. Directions below the surface yield `None`.
pub fn sample_brdf(n: V3, wo: V3, kd: V3, metallic: f64, roughness: f64, u: [f64; 2]) -> Option<BrdfSample> {
    if n.dot(wo) <= 0.0 {
        return None;
    }
    let ps = specular_probability(kd, metallic, roughness);
    let (lobe, dir) = if u[0] < ps {
        let h = ggx_sample_half(n, alpha_f(roughness), [u[0] / ps, u[1]]);
        (Lobe::Specular, reflect(wo, h))
    } else {
        (Lobe::Diffuse, cosine_sample(n, [(u[0] - ps) / (1.0 - ps), u[1]]))
    };
    if n.dot(dir) <= 0.0 {
        return None;
    }
    let pdf = brdf_pdf(n, wo, dir, kd, metallic, roughness);
    (pdf > 0.0).then_some(BrdfSample { dir, pdf, lobe })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diffuse_value() {
        // grazing-free geometry where the specular lobe is negligible at roughness 1
        let n = V3::Z;
        let f = brdf_eval(n, V3::Z, V3::Z, V3::splat(0.5), 0.0, 1.0);
        let spec = ggx_d(1.0, 1.0) * smith_v(1.0, 1.0, 1.0) * F0_DIELECTRIC;
        // directional albedo fit at roughness 1 is 1 / (1 + 2.258)
        let kd = 1.0 - F0_DIELECTRIC / 3.258;
        assert!((f.x - (kd * 0.5 / PI + spec)).abs() < 1e-15);
    }

    #[test]
    fn metal_fresnel_at_normal_incidence() {
        assert_eq!(fresnel_schlick(0.3, 1.0), 0.3);
        assert_eq!(fresnel_schlick(0.3, 0.0), 1.0);
    }

    #[test]
    fn below_hemisphere_is_zero() {
        let f = brdf_eval(V3::Z, V3::Z, -V3::Z, V3::splat(0.5), 0.3, 0.5);
        assert_eq!(f, V3::ZERO);
    }

    #[test]
    fn cosine_inverse_cdf_point() {
        let d = cosine_sample(V3::Z, [0.5, 0.5]);
        let (t, b) = V3::Z.frame();
        let want = t * (-0.5f64.sqrt()) + b * 0.0 + V3::Z * 0.5f64.sqrt();
        assert!((d - want).length() < 1e-12);
    }

    #[test]
    fn low_roughness_goes_to_mirror() {
        let n = V3::Z;
        let wo = V3::new(0.6, 0.0, 0.8);
        let mirror = V3::new(-0.6, 0.0, 0.8);
        let mut hits = 0;
        for i in 0..100 {
            let u = [0.001 + 0.0099 * (i as f64 / 100.0), (i as f64 * 0.618).fract()];
            if let Some(s) = sample_brdf(n, wo, V3::splat(1.0), 1.0, 0.01, u) {
                assert_eq!(s.lobe, Lobe::Specular);
                assert!(s.dir.dot(mirror) > 1.0 - 1e-4);
                hits += 1;
            }
        }
        assert_eq!(hits, 100);
    }
}
