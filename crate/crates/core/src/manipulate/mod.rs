//! Rendering a trained model: novel views, relighting with a user sky and
//! virtual object insertion with shadow-ratio compositing.

use rayon::prelude::*;

use crate::geomesh::{refresh_mesh, Bvh, MeshSnapshot, Occluder, TriangleMesh};
use crate::image::Image;
use crate::math::{Mat4, V3};
use crate::nfield::{FieldError, Model};
use crate::sceneio::{Camera, RenderConfig};
use crate::shade::{composite_pixel, shade_pixel, shading_rng, tonemap_rgb, EnvMap, Lighting, ShadingConfig, Surface};
use crate::volren::{gbuffer_sample, march, GBuffer, Ray};

/// Lower bound of the unoccluded shading below which a shadow ratio carries
/// no information.
pub const RATIO_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RenderError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Linear radiance and tonemapped pixels of a view plus its G-buffer.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub hdr: Image,
    pub ldr: Image,
    pub gbuffer: GBuffer,
}

/// Surface attributes of one primary ray.
#[derive(Debug, Clone, Copy)]
struct PixelSurface {
    d: V3,
    alpha: f64,
    /// Shading point, present on foreground pixels.
    x: Option<V3>,
    surf: Surface<f64>,
    degenerate: bool,
}

/// Everything a render needs besides the camera.
pub struct Renderer<'a> {
    pub model: &'a Model,
    pub mesh: &'a MeshSnapshot,
    pub cfg: RenderConfig,
}

impl<'a> Renderer<'a> {
    pub fn new(model: &'a Model, mesh: &'a MeshSnapshot, cfg: RenderConfig) -> Renderer<'a> {
        Renderer { model, mesh, cfg }
    }

    /// Environment exported from the model's sky at `cfg.export_res`.
    pub fn exported_sky(&self, illum: usize) -> Result<EnvMap, RenderError> {
        let [h, w] = self.cfg.export_res;
        Ok(EnvMap::from_image(&self.model.export_envmap(illum, h, w)?))
    }

    fn surfaces(&self, cam: &Camera) -> (Vec<PixelSurface>, GBuffer) {
        let (w, h) = (cam.width, cam.height);
        let model = self.model;
        let march_cfg = self.cfg.march;
        let seed = self.cfg.seed;
        let px_surfs: Vec<PixelSurface> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (px, py) = (i % w, i / w);
                let (o, d) = cam.ray(px as f64 + 0.5, py as f64 + 0.5);
                let empty = PixelSurface { d, alpha: 0.0, x: None, surf: Surface::new(V3::Z, V3::ZERO, 0.0, 1.0), degenerate: true };
                let Some(ray) = Ray::clipped(o, d, model, (px as u32, py as u32), 0) else { return empty };
                let c = model.plain();
                let mut rng = crate::rng::pixel_rng(seed, 0, px, py, 0);
                let m = march(&c, model, &ray, &march_cfg, &mut None, &mut rng);
                let g = gbuffer_sample(&c, model, &ray, &m);
                let x = (g.a >= march_cfg.a_min).then(|| m.surface_point(&ray).unwrap_or_else(|| ray.at(ray.t_far)));
                PixelSurface { d, alpha: g.a, x, surf: Surface::new(g.n, g.kd, g.ks[0], g.ks[1]), degenerate: g.degenerate_normal }
            })
            .collect();
        let mut gb = GBuffer::new(w, h);
        for (i, s) in px_surfs.iter().enumerate() {
            let (px, py) = (i % w, i / w);
            gb.normal.set_rgb(px, py, s.surf.n);
            gb.base_color.set_rgb(px, py, s.surf.kd);
            gb.material.set(px, py, 0, s.surf.metallic);
            gb.material.set(px, py, 1, s.surf.roughness);
            let depth = s.x.map_or(0.0, |x| (x - cam.center()).length());
            gb.depth.set(px, py, 0, depth);
            gb.alpha.set(px, py, 0, s.alpha);
            gb.foreground[i] = s.x.is_some();
        }
        (px_surfs, gb)
    }

    fn shade(&self, s: &PixelSurface, light: &Lighting, occ: &dyn Occluder, cfg: &ShadingConfig, px: usize, py: usize) -> Option<V3> {
        let x = s.x?;
        let mut rng = shading_rng(cfg.seed, 0, px, py, 0);
        Some(shade_pixel(x, -s.d, &s.surf, s.degenerate, light, occ, cfg, &mut rng).radiance)
    }

    /// Full pipeline under an arbitrary sky; exposure is one.
    pub fn render_with(&self, cam: &Camera, light: &Lighting) -> Rendered {
        let (surfs, gbuffer) = self.surfaces(cam);
        let w = cam.width;
        let shading = self.cfg.shading;
        let occ: &dyn Occluder = &self.mesh.bvh;
        let hdr_px: Vec<V3> = surfs
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let l = self.shade(s, light, occ, &shading, i % w, i / w);
                composite_pixel(s.alpha, l, light.map.lookup(s.d))
            })
            .collect();
        finish(cam, &hdr_px, shading.gamma, gbuffer)
    }

    /// Standard render of an unseen pose with the model's exported sky.
    pub fn render_novel_view(&self, cam: &Camera, illum: usize) -> Result<Rendered, RenderError> {
        cam.validate().map_err(|e| RenderError::Invalid(e.to_string()))?;
        let light = Lighting::new(self.exported_sky(illum)?);
        Ok(self.render_with(cam, &light))
    }

    /// Render with the sky replaced by `env`.
    pub fn relight(&self, cam: &Camera, env: &EnvMap) -> Result<Rendered, RenderError> {
        cam.validate().map_err(|e| RenderError::Invalid(e.to_string()))?;
        if env.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(RenderError::Invalid("environment map must hold finite non-negative radiance".into()));
        }
        Ok(self.render_with(cam, &Lighting::new(env.clone())))
    }

    /// Composite a virtual object into a view.
    pub fn insert_object(&self, spec: &InsertionSpec) -> Result<Insertion, RenderError> {
        spec.validate(self.model)?;
        let cam = &spec.camera;
        cam.validate().map_err(|e| RenderError::Invalid(e.to_string()))?;
        let light = Lighting::new(self.exported_sky(spec.illum)?);
        let base = self.render_with(cam, &light);
        let (surfs, _) = self.surfaces(cam);

        let object = spec.mesh.transformed(&spec.transform);
        let object_bvh = Bvh::build(&object);
        let mut merged = self.mesh.mesh.clone();
        merged.merge(&object);
        let merged_bvh = Bvh::build(&merged);

        let w = cam.width;
        let shading = self.cfg.shading;
        let scene_occ: &dyn Occluder = &self.mesh.bvh;
        let results: Vec<(V3, bool)> = surfs
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let (px, py) = (i % w, i / w);
                let base_px = base.hdr.rgb(px, py);
                let (o, _) = cam.ray(px as f64 + 0.5, py as f64 + 0.5);
                let t_scene = s.x.map_or(f64::INFINITY, |x| (x - o).dot(s.d));
                if let Some(hit) = object_bvh.closest_hit(o, s.d, 0.0, t_scene) {
                    let mut n = object.face_normal(hit.tri as usize);
                    if n.dot(s.d) > 0.0 {
                        n = -n;
                    }
                    let surf = Surface::new(n, V3::from_array(spec.albedo), spec.metallic, spec.roughness);
                    let x = o + s.d * hit.t;
                    let mut rng = shading_rng(shading.seed, 0, px, py, 0);
                    let l = shade_pixel(x, -s.d, &surf, false, &light, &merged_bvh, &shading, &mut rng).radiance;
                    return (l, true);
                }
                let Some(without) = self.shade(s, &light, scene_occ, &shading, px, py) else { return (base_px, false) };
                let with = self.shade(s, &light, &merged_bvh, &shading, px, py).expect("same surface");
                let ratio = |a: f64, b: f64| if b < RATIO_EPS { 1.0 } else { (a / b).min(1.0) };
                let r = V3::new(ratio(with.x, without.x), ratio(with.y, without.y), ratio(with.z, without.z));
                (base_px.mul_elem(r), false)
            })
            .collect();
        let hdr_px: Vec<V3> = results.iter().map(|r| r.0).collect();
        let coverage = results.iter().map(|r| r.1).collect();
        let out = finish(cam, &hdr_px, shading.gamma, base.gbuffer);
        Ok(Insertion { composite: out.ldr, hdr: out.hdr, coverage })
    }
}

fn finish(cam: &Camera, hdr_px: &[V3], gamma: f64, gbuffer: GBuffer) -> Rendered {
    let mut hdr = Image::new(cam.width, cam.height, 3);
    let mut ldr = Image::new(cam.width, cam.height, 3);
    for (i, &v) in hdr_px.iter().enumerate() {
        let (px, py) = (i % cam.width, i / cam.width);
        hdr.set_rgb(px, py, v);
        ldr.set_rgb(px, py, tonemap_rgb(v, gamma));
    }
    Rendered { hdr, ldr, gbuffer }
}

/// Object mesh with one constant material, placed by a rigid transform.
#[derive(Debug, Clone)]
pub struct InsertionSpec {
    pub mesh: TriangleMesh,
    pub transform: Mat4,
    pub albedo: [f64; 3],
    pub metallic: f64,
    pub roughness: f64,
    pub camera: Camera,
    pub illum: usize,
}

impl InsertionSpec {
    pub fn validate(&self, model: &Model) -> Result<(), RenderError> {
        if self.illum >= model.n_illum() {
            return Err(RenderError::Invalid(format!("illumination {} outside [0, {})", self.illum, model.n_illum())));
        }
        if self.albedo.iter().chain([&self.metallic, &self.roughness]).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(RenderError::Invalid("object albedo, metallic and roughness must lie in [0, 1]".into()));
        }
        if !self.mesh.check_indices() {
            return Err(RenderError::Invalid("object mesh has out-of-range indices".into()));
        }
        if !self.mesh.is_empty() {
            let b = self.mesh.transformed(&self.transform).bounds();
            if !model.bounds().contains_box(&b) {
                return Err(RenderError::Invalid("transformed object leaves the scene bounds".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Insertion {
    pub composite: Image,
    pub hdr: Image,
    /// Pixels showing the object.
    pub coverage: Vec<bool>,
}

/// Mesh snapshot used by the standard render.
pub fn scene_mesh(model: &Model, cfg: &RenderConfig) -> MeshSnapshot {
    refresh_mesh(model, cfg.grid_res, 0)
}
