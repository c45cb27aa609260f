//! Synthetic scenes with known intrinsics: analytic primitives under an
//! equirectangular sky, rendered by sphere tracing plus the Monte Carlo
//! shading of [`crate::shade`]. Shadow rays are intersected analytically
//! with the primitives, so nothing here depends on the mesh code.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geomesh::Occluder;
use crate::image::Image;
use crate::math::{Aabb, V3};
use crate::nfield::{texel_direction, SemanticClass};
use crate::rng::tagged_rng;
use crate::shade::{apply_exposure, shade_pixel, shading_rng, tonemap_rgb, EnvMap, Lighting, ShadingConfig, Strategy, Surface};

use super::{read_pfm, save_hdr, Camera, Dataset, DepthRay, IoError, Ldr, PfmImage, View};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Solid below `z = height`.
    Plane { height: f64 },
    Box { center: [f64; 3], half: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    pub fn sdf(&self, p: V3) -> f64 {
        match *self {
            Shape::Plane { height } => p.z - height,
            Shape::Box { center, half } => box_sdf(p - V3::from_array(center), V3::from_array(half)),
            Shape::Sphere { center, radius } => (p - V3::from_array(center)).length() - radius,
        }
    }

    /// Parameter interval of the ray inside the solid.
    pub fn interval(&self, o: V3, d: V3) -> Option<(f64, f64)> {
        match *self {
            Shape::Plane { height } => {
                if d.z == 0.0 {
                    (o.z <= height).then_some((f64::NEG_INFINITY, f64::INFINITY))
                } else {
                    let t = (height - o.z) / d.z;
                    Some(if d.z > 0.0 { (f64::NEG_INFINITY, t) } else { (t, f64::INFINITY) })
                }
            }
            Shape::Box { center, half } => {
                let c = V3::from_array(center);
                let h = V3::from_array(half);
                Aabb::new(c - h, c + h).intersect_ray(o, d)
            }
            Shape::Sphere { center, radius } => {
                let oc = o - V3::from_array(center);
                let b = oc.dot(d);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c;
                (disc >= 0.0).then(|| (-b - disc.sqrt(), -b + disc.sqrt()))
            }
        }
    }
}

fn box_sdf(p: V3, h: V3) -> f64 {
    let q = V3::new(p.x.abs() - h.x, p.y.abs() - h.y, p.z.abs() - h.z);
    q.max_elem(V3::ZERO).length() + q.x.max(q.y).max(q.z).min(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub albedo: [f64; 3],
    #[serde(default)]
    pub metallic: f64,
    #[serde(default = "default_roughness")]
    pub roughness: f64,
    pub class: SemanticClass,
}

fn default_roughness() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SkySpec {
    Uniform {
        radiance: [f64; 3],
        #[serde(default = "default_sky_w")]
        width: usize,
        #[serde(default = "default_sky_h")]
        height: usize,
    },
    /// Uniform ambient plus one bright texel.
    Sun {
        ambient: [f64; 3],
        sun_row: usize,
        sun_col: usize,
        sun_radiance: [f64; 3],
        #[serde(default = "default_sky_w")]
        width: usize,
        #[serde(default = "default_sky_h")]
        height: usize,
    },
    /// Equirectangular PFM, relative to the spec file.
    File { path: String },
}

fn default_sky_w() -> usize {
    128
}

fn default_sky_h() -> usize {
    64
}

impl SkySpec {
    pub fn build(&self, base: &Path) -> Result<EnvMap, IoError> {
        match self {
            SkySpec::Uniform { radiance, width, height } => Ok(EnvMap::uniform(*width, *height, V3::from_array(*radiance))),
            SkySpec::Sun { ambient, sun_row, sun_col, sun_radiance, width, height } => {
                if sun_row >= height || sun_col >= width {
                    return Err(IoError::Invalid(format!("sun texel ({sun_row}, {sun_col}) outside a {height}x{width} sky")));
                }
                let mut m = EnvMap::uniform(*width, *height, V3::from_array(*ambient));
                m.set(sun_row * width + sun_col, V3::from_array(*sun_radiance));
                Ok(m)
            }
            SkySpec::File { path } => {
                let img = read_pfm(&base.join(path))?.to_image();
                if img.channels != 3 {
                    return Err(IoError::Invalid(format!("{path}: sky must be an RGB PFM")));
                }
                Ok(EnvMap::from_image(&img))
            }
        }
    }
}

/// Cameras on a horizontal ring looking at a common target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRing {
    pub radius: f64,
    pub height: f64,
    pub target: [f64; 3],
    pub fov_deg: f64,
    pub image_size: [usize; 2],
    /// Azimuth of the first view in degrees.
    pub start_deg: f64,
}

impl Default for CameraRing {
    fn default() -> Self {
        CameraRing { radius: 2.5, height: 1.6, target: [0.0, 0.0, 0.1], fov_deg: 45.0, image_size: [40, 40], start_deg: 0.0 }
    }
}

impl CameraRing {
    /// Camera at fractional ring position `k` out of `n`.
    pub fn camera(&self, k: f64, n: usize) -> Camera {
        let a = self.start_deg.to_radians() + std::f64::consts::TAU * k / n as f64;
        let eye = V3::new(self.radius * a.cos(), self.radius * a.sin(), self.height);
        Camera::look_at(eye, V3::from_array(self.target), V3::Z, self.fov_deg, self.image_size[0], self.image_size[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    /// Scene bounds; primitives are clipped to them.
    pub bounds: Aabb,
    #[serde(rename = "primitive")]
    pub primitives: Vec<Primitive>,
    pub sky: SkySpec,
    pub cameras: CameraRing,
    pub n_views: usize,
    /// Held-out views halfway between training views.
    pub n_holdout: usize,
    /// Secondary rays per pixel.
    pub samples: usize,
    /// Depth rays per training view.
    pub depth_rays: usize,
    /// Per-image, per-channel gains drawn log-uniformly from this range and
    /// normalized to mean 1 per channel; none means unit gains.
    pub gain_range: Option<[f64; 2]>,
    pub gamma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            bounds: Aabb { min: [-1.0, -1.0, -0.2], max: [1.0, 1.0, 1.0] },
            primitives: vec![Primitive {
                shape: Shape::Plane { height: 0.0 },
                albedo: [0.5; 3],
                metallic: 0.0,
                roughness: 1.0,
                class: SemanticClass::Road,
            }],
            sky: SkySpec::Uniform { radiance: [1.0; 3], width: 128, height: 64 },
            cameras: CameraRing::default(),
            n_views: 4,
            n_holdout: 0,
            samples: 4096,
            depth_rays: 0,
            gain_range: None,
            gamma: 2.2,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.bounds.is_degenerate() {
            return Err("bounds must have positive extent on every axis".into());
        }
        if self.primitives.is_empty() {
            return Err("at least one primitive is required".into());
        }
        if self.n_views == 0 {
            return Err("n_views must be at least 1".into());
        }
        if self.samples < 2 {
            return Err("samples must be at least 2".into());
        }
        if let Some([lo, hi]) = self.gain_range {
            if !(lo > 0.0 && hi >= lo) {
                return Err(format!("gain_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"));
            }
        }
        let [w, h] = self.cameras.image_size;
        if w == 0 || h == 0 {
            return Err("cameras.image_size must be positive".into());
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if p.albedo.iter().chain([&p.metallic, &p.roughness]).any(|v| !(0.0..=1.0).contains(v)) {
                return Err(format!("primitive {i}: albedo, metallic and roughness must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Hit of a primary ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneHit {
    pub t: f64,
    pub x: V3,
    pub n: V3,
    pub prim: usize,
}

/// The analytic scene: primitives clipped to the bounds.
#[derive(Debug, Clone)]
pub struct Scene {
    pub bounds: Aabb,
    pub primitives: Vec<Primitive>,
}

const HIT_EPS: f64 = 1e-7;

impl Scene {
    fn bounds_sdf(&self, p: V3) -> f64 {
        box_sdf(p - self.bounds.center(), self.bounds.extent() * 0.5)
    }

    /// Signed distance bound of the clipped union.
    pub fn sdf(&self, p: V3) -> f64 {
        let u = self.primitives.iter().map(|q| q.shape.sdf(p)).fold(f64::INFINITY, f64::min);
        u.max(self.bounds_sdf(p))
    }

    fn nearest_primitive(&self, p: V3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in self.primitives.iter().enumerate() {
            let s = q.shape.sdf(p);
            if s < best.0 {
                best = (s, i);
            }
        }
        best.1
    }

    fn normal(&self, p: V3) -> V3 {
        let h = 1e-6;
        let g = V3::new(
            self.sdf(p + V3::new(h, 0.0, 0.0)) - self.sdf(p - V3::new(h, 0.0, 0.0)),
            self.sdf(p + V3::new(0.0, h, 0.0)) - self.sdf(p - V3::new(0.0, h, 0.0)),
            self.sdf(p + V3::new(0.0, 0.0, h)) - self.sdf(p - V3::new(0.0, 0.0, h)),
        );
        if g.length() > 0.0 {
            g.normalized()
        } else {
            V3::Z
        }
    }

    /// Sphere-trace the first surface along a unit-direction ray.
    pub fn trace(&self, o: V3, d: V3) -> Option<SceneHit> {
        let (t0, t1) = self.bounds.intersect_ray(o, d)?;
        let mut t = t0.max(0.0);
        for _ in 0..4096 {
            if t > t1 + 1e-9 {
                return None;
            }
            let p = o + d * t;
            let s = self.sdf(p);
            if s < HIT_EPS {
                return Some(SceneHit { t, x: p, n: self.normal(p), prim: self.nearest_primitive(p) });
            }
            t += s;
        }
        None
    }
}

impl Occluder for Scene {
    fn occluded(&self, o: V3, d: V3) -> bool {
        let Some((b0, b1)) = self.bounds.intersect_ray(o, d) else { return false };
        self.primitives.iter().any(|p| match p.shape.interval(o, d) {
            Some((a0, a1)) => a0.max(b0).max(0.0) < a1.min(b1),
            None => false,
        })
    }
}

/// Ground-truth buffers of one view.
#[derive(Debug, Clone)]
pub struct GtView {
    pub albedo: Image,
    pub normal: Image,
    pub depth: Image,
    /// metallic, roughness
    pub material: Image,
    /// Linear radiance before any gain.
    pub hdr: Image,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: Dataset,
    pub holdout: Dataset,
    pub gt_train: Vec<GtView>,
    pub gt_holdout: Vec<GtView>,
    /// Gain applied to each training image.
    pub gains: Vec<V3>,
    pub sky: EnvMap,
    pub scene: Scene,
}

fn gains(spec: &SynthSpec) -> Vec<V3> {
    let Some([lo, hi]) = spec.gain_range else { return vec![V3::splat(1.0); spec.n_views] };
    let mut rng = tagged_rng(spec.seed, 0x6A15);
    let (a, b) = (lo.ln(), hi.ln());
    let raw: Vec<V3> = (0..spec.n_views)
        .map(|_| V3::new((a + (b - a) * rng.random::<f64>()).exp(), (a + (b - a) * rng.random::<f64>()).exp(), (a + (b - a) * rng.random::<f64>()).exp()))
        .collect();
    crate::nfield::normalize_exposures(&raw)
}

struct Rendered {
    ldr: Image,
    gt: GtView,
    semantic: Vec<u8>,
    sky: Vec<bool>,
}

fn render_view(scene: &Scene, light: &Lighting, cam: &Camera, gain: V3, cfg: &ShadingConfig, image: usize) -> Rendered {
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<Vec<(V3, V3, V3, f64, [f64; 2], V3, u8, bool)>> = (0..h)
        .into_par_iter()
        .map(|py| {
            (0..w)
                .map(|px| {
                    let (o, d) = cam.ray(px as f64 + 0.5, py as f64 + 0.5);
                    match scene.trace(o, d) {
                        Some(hit) => {
                            let p = &scene.primitives[hit.prim];
                            let surf = Surface::new(hit.n, V3::from_array(p.albedo), p.metallic, p.roughness);
                            let mut rng = shading_rng(cfg.seed, image, px, py, 0);
                            let l = shade_pixel(hit.x, -d, &surf, false, light, scene, cfg, &mut rng).radiance;
                            (l, surf.kd, hit.n, hit.t, [p.metallic, p.roughness], hit.x, p.class.id(), false)
                        }
                        None => (light.map.lookup(d), V3::ZERO, V3::ZERO, 0.0, [0.0; 2], V3::ZERO, SemanticClass::Sky.id(), true),
                    }
                })
                .collect()
        })
        .collect();
    let mut ldr = Image::new(w, h, 3);
    let mut gt = GtView {
        albedo: Image::new(w, h, 3),
        normal: Image::new(w, h, 3),
        depth: Image::new(w, h, 1),
        material: Image::new(w, h, 2),
        hdr: Image::new(w, h, 3),
    };
    let mut semantic = vec![0; w * h];
    let mut sky = vec![false; w * h];
    for (py, row) in rows.into_iter().enumerate() {
        for (px, (l, kd, n, t, m, _x, class, is_sky)) in row.into_iter().enumerate() {
            gt.hdr.set_rgb(px, py, l);
            ldr.set_rgb(px, py, tonemap_rgb(apply_exposure(l, gain), cfg.gamma));
            gt.albedo.set_rgb(px, py, kd);
            gt.normal.set_rgb(px, py, n);
            gt.depth.set(px, py, 0, t);
            gt.material.set(px, py, 0, m[0]);
            gt.material.set(px, py, 1, m[1]);
            semantic[py * w + px] = class;
            sky[py * w + px] = is_sky;
        }
    }
    // images are stored as 8-bit
    let ldr = Ldr::from_image(&ldr).to_image();
    Rendered { ldr, gt, semantic, sky }
}

/// Render the training and held-out datasets of a spec. `base` resolves
/// relative sky paths.
pub fn generate(spec: &SynthSpec, base: &Path) -> Result<SynthOutput, IoError> {
    spec.validate().map_err(IoError::Invalid)?;
    let sky = spec.sky.build(base)?;
    let light = Lighting::new(sky.clone());
    let scene = Scene { bounds: spec.bounds, primitives: spec.primitives.clone() };
    let cfg = ShadingConfig { samples: spec.samples, seed: spec.seed, exposure: true, gamma: spec.gamma, strategy: Strategy::Mis };
    let gains = gains(spec);

    let mut train = Dataset { n_illum: 1, views: Vec::new() };
    let mut gt_train = Vec::new();
    for (k, gain) in gains.iter().enumerate() {
        let cam = spec.cameras.camera(k as f64, spec.n_views);
        let r = render_view(&scene, &light, &cam, *gain, &cfg, k);
        let depth = (spec.depth_rays > 0).then(|| {
            let mut rng = tagged_rng(spec.seed ^ 0xD3, k as u64);
            let mut rays = Vec::with_capacity(spec.depth_rays);
            let mut tries = 0;
            while rays.len() < spec.depth_rays && tries < 20 * spec.depth_rays {
                tries += 1;
                let (o, d) = cam.ray(rng.random::<f64>() * cam.width as f64, rng.random::<f64>() * cam.height as f64);
                if let Some(hit) = scene.trace(o, d) {
                    rays.push(DepthRay { o, d, range: hit.t });
                }
            }
            rays
        });
        train.views.push(View {
            name: format!("train_{k:03}"),
            image: r.ldr,
            camera: cam,
            illum: 0,
            depth,
            semantic: Some(r.semantic),
            skymask: Some(r.sky),
        });
        gt_train.push(r.gt);
    }
    let mut holdout = Dataset { n_illum: 1, views: Vec::new() };
    let mut gt_holdout = Vec::new();
    for k in 0..spec.n_holdout {
        let pos = (k as f64 + 0.5) * spec.n_views as f64 / spec.n_holdout as f64;
        let cam = spec.cameras.camera(pos, spec.n_views);
        let r = render_view(&scene, &light, &cam, V3::splat(1.0), &cfg, 100_000 + k);
        holdout.views.push(View {
            name: format!("holdout_{k:03}"),
            image: r.ldr,
            camera: cam,
            illum: 0,
            depth: None,
            semantic: Some(r.semantic),
            skymask: Some(r.sky),
        });
        gt_holdout.push(r.gt);
    }
    Ok(SynthOutput { train, holdout, gt_train, gt_holdout, gains, sky, scene })
}

impl SynthOutput {
    /// `train/` and `holdout/` datasets, `gt/` buffers, `sky.pfm` and `gains.txt`.
    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        self.train.save(&dir.join("train"))?;
        if !self.holdout.views.is_empty() {
            self.holdout.save(&dir.join("holdout"))?;
        }
        let gt = dir.join("gt");
        let views = self.train.views.iter().zip(&self.gt_train).chain(self.holdout.views.iter().zip(&self.gt_holdout));
        for (v, g) in views {
            save_hdr(&g.albedo, &gt.join(format!("{}_albedo.pfm", v.name)))?;
            save_hdr(&g.normal, &gt.join(format!("{}_normal.pfm", v.name)))?;
            save_hdr(&g.depth, &gt.join(format!("{}_depth.pfm", v.name)))?;
            save_hdr(&g.material, &gt.join(format!("{}_material.pfm", v.name)))?;
            save_hdr(&g.hdr, &gt.join(format!("{}_hdr.pfm", v.name)))?;
        }
        super::write_pfm(&PfmImage::from_image(&self.sky.to_image()), &dir.join("sky.pfm"))?;
        let mut s = String::new();
        for (v, g) in self.train.views.iter().zip(&self.gains) {
            s.push_str(&format!("{} {:?} {:?} {:?}\n", v.name, g.x, g.y, g.z));
        }
        let p = dir.join("gains.txt");
        std::fs::write(&p, s).map_err(|e| IoError::Io(format!("{}: {e}", p.display())))
    }
}

/// Direction through the centre of texel `(row, col)` of a sky map.
pub fn texel_centre(map: &EnvMap, row: usize, col: usize) -> V3 {
    texel_direction(row, col, map.height, map.width)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_scene() -> Scene {
        Scene {
            bounds: Aabb { min: [-1.0, -1.0, -0.2], max: [1.0, 1.0, 1.0] },
            primitives: vec![Primitive { shape: Shape::Plane { height: 0.0 }, albedo: [0.5; 3], metallic: 0.0, roughness: 1.0, class: SemanticClass::Road }],
        }
    }

    #[test]
    fn trace_hits_plane() {
        let s = plane_scene();
        let hit = s.trace(V3::new(0.0, 0.0, 2.0), V3::new(0.0, 0.0, -1.0)).unwrap();
        assert!((hit.t - 2.0).abs() < 1e-6);
        assert!((hit.n - V3::Z).length() < 1e-6);
        assert!(s.trace(V3::new(0.0, 0.0, 2.0), V3::Z).is_none());
    }

    #[test]
    fn box_shadow_is_analytic() {
        let mut s = plane_scene();
        s.primitives.push(Primitive {
            shape: Shape::Box { center: [0.0, 0.0, 0.25], half: [0.25; 3] },
            albedo: [0.8; 3],
            metallic: 0.0,
            roughness: 1.0,
            class: SemanticClass::Building,
        });
        let up = V3::Z;
        assert!(s.occluded(V3::new(0.0, 0.0, 0.6), -up));
        assert!(!s.occluded(V3::new(0.5, 0.0, 0.001), up));
        assert!(s.occluded(V3::new(0.0, 0.0, 0.6 + 1e-3), -up));
        // towards the box from beside it
        assert!(s.occluded(V3::new(0.6, 0.0, 0.01), V3::new(-1.0, 0.0, 0.0)));
        // the ground is clipped at the bounds: a ray leaving sideways below z=0 is free
        assert!(!s.occluded(V3::new(1.5, 0.0, -0.1), V3::new(1.0, 0.0, 0.0)));
    }

    #[test]
    fn uniform_sky_plane_is_furnace_consistent() {
        let spec = SynthSpec {
            samples: 256,
            n_views: 1,
            cameras: CameraRing { image_size: [8, 8], ..Default::default() },
            ..Default::default()
        };
        let out = generate(&spec, Path::new(".")).unwrap();
        let v = &out.train.views[0];
        let g = &out.gt_train[0];
        let mut n = 0;
        for py in 0..8 {
            for px in 0..8 {
                if g.normal.rgb(px, py).z > 0.99 {
                    // albedo 0.5 under a unit sky: L = 0.5 * 0.96 from the diffuse lobe plus a small specular part
                    let l = g.hdr.rgb(px, py).x;
                    assert!((0.4..0.6).contains(&l), "{l}");
                    n += 1;
                }
            }
        }
        assert!(n > 10);
        assert!(v.skymask.as_ref().unwrap().iter().any(|&s| !s));
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = SynthSpec { samples: 16, n_views: 2, cameras: CameraRing { image_size: [6, 5], ..Default::default() }, ..Default::default() };
        let a = generate(&spec, Path::new(".")).unwrap();
        let b = generate(&spec, Path::new(".")).unwrap();
        for (x, y) in a.train.views.iter().zip(&b.train.views) {
            assert_eq!(x.image.data, y.image.data);
        }
    }
}
