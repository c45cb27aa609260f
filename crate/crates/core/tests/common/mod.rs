//! Shared box-on-plane fixture.
#![allow(dead_code)]

use std::path::Path;

use invrender::math::Aabb;
use invrender::nfield::{FieldConfig, HashGridConfig, SdfInit, SemanticClass};
use invrender::optim::{Schedule, TrainConfig};
use invrender::sceneio::{generate, CameraRing, Primitive, Shape, SkySpec, SynthOutput, SynthSpec};
use invrender::shade::{ShadingConfig, Strategy};
use invrender::volren::MarchConfig;

pub const SKY_H: usize = 64;
pub const SKY_W: usize = 128;
pub const SUN_ROW: usize = 20;
pub const SUN_COL: usize = 40;
pub const SUN_RADIANCE: f64 = 1700.0;
pub const AMBIENT: f64 = 0.3;

pub const BOX_CENTER: [f64; 3] = [0.0, 0.0, 0.35];
pub const BOX_HALF: [f64; 3] = [0.2, 0.2, 0.35];
pub const PLANE_ALBEDO: [f64; 3] = [0.5, 0.45, 0.4];
pub const BOX_ALBEDO: [f64; 3] = [0.7, 0.35, 0.2];

pub fn bounds() -> Aabb {
    Aabb { min: [-1.0, -1.0, -0.2], max: [1.0, 1.0, 1.0] }
}

pub fn spec(n_views: usize, n_holdout: usize, size: usize, samples: usize, gains: bool) -> SynthSpec {
    SynthSpec {
        seed: 7,
        bounds: bounds(),
        primitives: vec![
            Primitive { shape: Shape::Plane { height: 0.0 }, albedo: PLANE_ALBEDO, metallic: 0.0, roughness: 1.0, class: SemanticClass::Road },
            Primitive {
                shape: Shape::Box { center: BOX_CENTER, half: BOX_HALF },
                albedo: BOX_ALBEDO,
                metallic: 0.0,
                roughness: 1.0,
                class: SemanticClass::Building,
            },
        ],
        sky: SkySpec::Sun {
            ambient: [AMBIENT; 3],
            sun_row: SUN_ROW,
            sun_col: SUN_COL,
            sun_radiance: [SUN_RADIANCE; 3],
            width: SKY_W,
            height: SKY_H,
        },
        cameras: CameraRing { radius: 2.4, height: 1.5, target: [0.0, 0.0, 0.1], fov_deg: 50.0, image_size: [size, size], start_deg: 10.0 },
        n_views,
        n_holdout,
        samples,
        depth_rays: 64,
        gain_range: gains.then_some([0.8, 1.25]),
        gamma: 2.2,
    }
}

pub fn scene(gains: bool) -> SynthOutput {
    generate(&spec(20, 5, 40, 2048, gains), Path::new(".")).expect("fixture")
}

pub fn fields() -> FieldConfig {
    FieldConfig {
        grid: HashGridConfig { levels: 6, log2_table: 14, features: 2, base_res: 8.0, top_res: 128.0 },
        hidden: 32,
        hidden_layers: 1,
        sky_width: 64,
        sky_layers: 3,
        sky_octaves: 6,
        dir_octaves: 2,
        sdf_init: SdfInit::Plane { height: 0.0 },
        inv_kappa_init: 0.3,
        grad_eps: 5e-3,
        sky_init: 1.0,
        seed: 3,
    }
}

pub fn train_config(exposure: bool) -> TrainConfig {
    TrainConfig {
        schedule: Schedule { warmup: 5000, main: 50000 },
        iters_scale: 0.1,
        batch: 128,
        depth_batch: 32,
        eikonal_points: 64,
        march: MarchConfig { n_uniform: 64, n_adaptive: 32, ..MarchConfig::default() },
        shading: ShadingConfig { samples: 32, seed: 11, exposure, gamma: 2.2, strategy: Strategy::Mis },
        mesh_period: 50,
        grid_res: [48, 48, 48],
        sky_res: [64, 128],
        seed: 5,
        ..TrainConfig::default()
    }
}

use invrender::geomesh::visibility;
use invrender::image::psnr;
use invrender::manipulate::{scene_mesh, Renderer};
use invrender::math::V3;
use invrender::nfield::{texel_direction, Model};
use invrender::sceneio::RenderConfig;

pub fn render_config() -> RenderConfig {
    let mut r = RenderConfig::default();
    r.shading.samples = 256;
    r.grid_res = [96; 3];
    r.seed = 1;
    r
}

pub fn sun_direction() -> V3 {
    texel_direction(SUN_ROW, SUN_COL, SKY_H, SKY_W)
}

/// Ground pixels of a view split into sun-lit and shadowed, away from
/// shadow edges and the box footprint.
pub fn ground_regions(out: &SynthOutput, view: usize) -> (Vec<usize>, Vec<usize>) {
    let v = &out.train.views[view];
    let g = &out.gt_train[view];
    let sun = sun_direction();
    let (w, h) = (v.camera.width, v.camera.height);
    let (mut lit, mut shadow) = (Vec::new(), Vec::new());
    for py in 0..h {
        for px in 0..w {
            let n = g.normal.rgb(px, py);
            let t = g.depth.get(px, py, 0);
            if t <= 0.0 || n.z < 0.99 {
                continue;
            }
            let (o, d) = v.camera.ray(px as f64 + 0.5, py as f64 + 0.5);
            let x = o + d * t;
            if x.z.abs() > 1e-4 || x.x.abs().max(x.y.abs()) < BOX_HALF[0] + 0.05 {
                continue;
            }
            let r = 0.04;
            let probes = [x, x + V3::new(r, 0.0, 0.0), x - V3::new(r, 0.0, 0.0), x + V3::new(0.0, r, 0.0), x - V3::new(0.0, r, 0.0)];
            let vis: Vec<f64> = probes.iter().map(|p| visibility(*p, sun, &out.scene)).collect();
            if vis.iter().all(|&s| s == 1.0) {
                lit.push(py * w + px);
            } else if vis.iter().all(|&s| s == 0.0) {
                shadow.push(py * w + px);
            }
        }
    }
    (lit, shadow)
}

#[derive(Debug, Clone, Copy)]
pub struct Eval {
    pub lit_albedo: f64,
    pub shadow_albedo: f64,
    pub albedo_dev: f64,
    pub n_lit: usize,
    pub n_shadow: usize,
    pub argmax: (usize, usize),
    pub sun_dist: f64,
    pub holdout_psnr: f64,
}

/// Row and column distance on the equirectangular grid, columns wrapping.
pub fn texel_distance(a: (usize, usize), b: (usize, usize), w: usize) -> f64 {
    let dr = a.0.abs_diff(b.0) as f64;
    let dc = a.1.abs_diff(b.1);
    let dc = dc.min(w - dc) as f64;
    dr.max(dc)
}

pub fn evaluate(model: &Model, out: &SynthOutput) -> Eval {
    let cfg = render_config();
    let mesh = scene_mesh(model, &cfg);
    let r = Renderer::new(model, &mesh, cfg);

    let (mut lit_sum, mut lit_n, mut sh_sum, mut sh_n) = (0.0, 0, 0.0, 0);
    for view in 0..out.train.views.len() {
        let (lit, shadow) = ground_regions(out, view);
        if lit.is_empty() && shadow.is_empty() {
            continue;
        }
        let g = invrender::volren::render_gbuffer(model, &out.train.views[view].camera, &cfg.march, cfg.seed);
        let mean = |i: usize| g.base_color.data[3 * i..3 * i + 3].iter().sum::<f64>() / 3.0;
        for i in lit {
            lit_sum += mean(i);
            lit_n += 1;
        }
        for i in shadow {
            sh_sum += mean(i);
            sh_n += 1;
        }
    }
    let lit_albedo = lit_sum / lit_n.max(1) as f64;
    let shadow_albedo = sh_sum / sh_n.max(1) as f64;

    let sky = r.exported_sky(0).expect("sky");
    let mut best = (0, 0.0);
    for t in 0..sky.n_texels() {
        let l = sky.texel(t).luminance();
        if l > best.1 {
            best = (t, l);
        }
    }
    let argmax = (best.0 / sky.width, best.0 % sky.width);

    let mut p = 0.0;
    for v in &out.holdout.views {
        let img = r.render_novel_view(&v.camera, 0).expect("render").ldr;
        p += psnr(&img, &v.image, None);
    }
    Eval {
        lit_albedo,
        shadow_albedo,
        albedo_dev: (shadow_albedo - lit_albedo).abs() / lit_albedo,
        n_lit: lit_n,
        n_shadow: sh_n,
        argmax,
        sun_dist: texel_distance(argmax, (SUN_ROW, SUN_COL), SKY_W),
        holdout_psnr: p / out.holdout.views.len().max(1) as f64,
    }
}
