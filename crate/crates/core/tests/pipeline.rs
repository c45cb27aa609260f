mod common;

use invrender::geomesh::TriangleMesh;
use invrender::image::psnr;
use invrender::manipulate::{scene_mesh, InsertionSpec, Renderer};
use invrender::math::{Mat4, V3};
use invrender::nfield::{FieldConfig, HashGridConfig, Model, ModelSpec};
use invrender::optim::{Schedule, Trainer};
use invrender::sceneio::{generate, Dataset, RenderConfig, SynthOutput};
use invrender::shade::EnvMap;
use invrender::volren::MarchConfig;

fn tiny() -> SynthOutput {
    let mut s = common::spec(3, 1, 10, 8, true);
    s.depth_rays = 24;
    generate(&s, std::path::Path::new(".")).unwrap()
}

fn tiny_model(out: &SynthOutput) -> Model {
    let fields = FieldConfig {
        grid: HashGridConfig { levels: 3, log2_table: 10, features: 2, base_res: 4.0, top_res: 16.0 },
        hidden: 16,
        sky_width: 16,
        sky_layers: 2,
        ..common::fields()
    };
    Model::new(ModelSpec { fields, bounds: common::bounds(), n_illum: out.train.n_illum, n_images: out.train.views.len() })
}

fn cheap_render() -> RenderConfig {
    let mut r = RenderConfig::default();
    r.shading.samples = 16;
    r.grid_res = [24; 3];
    r.export_res = [16, 32];
    r.march = MarchConfig { n_uniform: 24, n_adaptive: 8, jitter: false, ..MarchConfig::default() };
    r
}

#[test]
fn synthetic_dataset_survives_disk() {
    let out = tiny();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let back = Dataset::load(&dir.path().join("train")).unwrap();
    assert_eq!(back.n_illum, out.train.n_illum);
    assert_eq!(back.views.len(), out.train.views.len());
    for (a, b) in out.train.views.iter().zip(&back.views) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.illum, b.illum);
        assert_eq!(a.camera.to_text(), b.camera.to_text());
        assert_eq!(a.semantic, b.semantic);
        assert_eq!(a.skymask, b.skymask);
        // images pass through 8 bits
        for (x, y) in a.image.data.iter().zip(&b.image.data) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12, "{x} vs {y}");
        }
        let (da, db) = (a.depth.as_ref().unwrap(), b.depth.as_ref().unwrap());
        assert_eq!(da.len(), db.len());
        for (p, q) in da.iter().zip(db) {
            assert!((p.o - q.o).length() < 1e-9 && (p.d - q.d).length() < 1e-9 && (p.range - q.range).abs() < 1e-9);
        }
    }
}

#[test]
fn depth_rays_hit_the_scene_at_their_range() {
    let out = tiny();
    let mut n = 0;
    for v in &out.train.views {
        for r in v.depth.as_ref().unwrap() {
            assert!((r.d.length() - 1.0).abs() < 1e-9);
            let hit = out.scene.trace(r.o, r.d).expect("depth ray misses");
            assert!((hit.t - r.range).abs() < 1e-6, "{} vs {}", hit.t, r.range);
            // independent check against the primitives' own signed distance
            assert!(out.scene.sdf(r.o + r.d * r.range).abs() < 1e-6);
            n += 1;
        }
    }
    assert_eq!(n, 3 * 24);
}

#[test]
fn gains_average_to_one_per_channel() {
    let out = tiny();
    let mean = out.gains.iter().fold(V3::ZERO, |a, &b| a + b) * (1.0 / out.gains.len() as f64);
    assert!((mean - V3::splat(1.0)).length() < 1e-12, "{mean:?}");
    assert!(out.gains.iter().any(|g| (*g - V3::splat(1.0)).length() > 1e-3));
}

#[test]
fn warmup_lowers_the_radiance_loss() {
    let out = tiny();
    let mut cfg = common::train_config(true);
    cfg.schedule = Schedule { warmup: 80, main: 1 };
    cfg.iters_scale = 1.0;
    cfg.batch = 64;
    cfg.grid_res = [16; 3];
    cfg.march = MarchConfig { n_uniform: 24, n_adaptive: 8, ..MarchConfig::default() };
    let mut t = Trainer::new(tiny_model(&out), &out.train, cfg).unwrap();
    let mut rad = Vec::new();
    t.run(|r, _| rad.push(r.terms.rad));
    assert_eq!(rad.len(), 81);
    assert!(rad.iter().all(|x| x.is_finite()));
    let head: f64 = rad[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = rad[70..80].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.8 * head, "radiance loss {head} -> {tail}");
}

#[test]
fn relighting_with_the_own_sky_reproduces_the_render() {
    let out = tiny();
    let model = tiny_model(&out);
    let cfg = cheap_render();
    let mesh = scene_mesh(&model, &cfg);
    let r = Renderer::new(&model, &mesh, cfg);
    let cam = &out.holdout.views[0].camera;
    let base = r.render_novel_view(cam, 0).unwrap();
    let sky = r.exported_sky(0).unwrap();
    let relit = r.relight(cam, &sky).unwrap();
    assert!(psnr(&base.ldr, &relit.ldr, None) > 40.0);

    // a darker sky darkens every pixel
    let dim = EnvMap::from_image(&{
        let mut img = sky.to_image();
        img.data.iter_mut().for_each(|x| *x *= 0.25);
        img
    });
    let dark = r.relight(cam, &dim).unwrap();
    let sum = |i: &invrender::image::Image| i.data.iter().sum::<f64>();
    assert!(sum(&dark.hdr) < 0.5 * sum(&base.hdr));
}

#[test]
fn insertion_covers_pixels_and_leaves_an_empty_mesh_untouched() {
    let out = tiny();
    let model = tiny_model(&out);
    let cfg = cheap_render();
    let mesh = scene_mesh(&model, &cfg);
    let r = Renderer::new(&model, &mesh, cfg);
    let cam = out.holdout.views[0].camera.clone();
    let base = r.render_novel_view(&cam, 0).unwrap();

    let mut spec = InsertionSpec {
        mesh: TriangleMesh { vertices: Vec::new(), triangles: Vec::new(), stamp: 0 },
        transform: Mat4::IDENTITY,
        albedo: [0.9, 0.1, 0.1],
        metallic: 0.0,
        roughness: 0.5,
        camera: cam.clone(),
        illum: 0,
    };
    let empty = r.insert_object(&spec).unwrap();
    assert_eq!(empty.composite.data, base.ldr.data);
    assert!(empty.coverage.iter().all(|&c| !c));

    // a cube on the central ray, well in front of the soft untrained surface
    let (w, h) = (cam.width, cam.height);
    let (o, d) = cam.ray(w as f64 / 2.0 + 0.5, h as f64 / 2.0 + 0.5);
    let c = o + d * 2.0;
    let s = 0.15;
    let v: Vec<V3> = (0..8).map(|i| c + V3::new(if i & 1 == 0 { -s } else { s }, if i & 2 == 0 { -s } else { s }, if i & 4 == 0 { -s } else { s })).collect();
    let f = [[0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4], [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5]];
    spec.mesh = TriangleMesh { vertices: v, triangles: f.to_vec(), stamp: 0 };
    let ins = r.insert_object(&spec).unwrap();
    assert!(ins.coverage[(h / 2) * w + w / 2]);
    let covered = ins.coverage.iter().filter(|&&c| c).count();
    assert!(covered > 0 && covered < w * h);
    assert!(ins.composite.data.iter().all(|x| (0.0..=1.0).contains(x)));
}
