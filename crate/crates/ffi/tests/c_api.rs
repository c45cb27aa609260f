use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use invrender::manipulate::{scene_mesh, Renderer};
use invrender::math::{Aabb, Mat4, V3};
use invrender::nfield::{save_checkpoint, FieldConfig, HashGridConfig, Model, ModelSpec, SdfInit};
use invrender::sceneio::Camera;
use invrender_ffi::*;

fn tiny_model() -> Model {
    let fields = FieldConfig {
        grid: HashGridConfig { levels: 2, log2_table: 8, features: 2, base_res: 4.0, top_res: 8.0 },
        hidden: 8,
        sky_width: 8,
        sky_layers: 2,
        sdf_init: SdfInit::Plane { height: 0.0 },
        ..FieldConfig::default()
    };
    Model::new(ModelSpec { fields, bounds: Aabb { min: [-1.0; 3], max: [1.0; 3] }, n_illum: 1, n_images: 2 })
}

fn opts() -> IrRenderOptions {
    IrRenderOptions { samples: 8, march_uniform: 24, march_adaptive: 8, grid_res: 10, sky_height: 8, sky_width: 16, seed: 3 }
}

fn camera() -> (Camera, IrCamera) {
    let cam = Camera::look_at(V3::new(2.0, 0.3, 1.2), V3::ZERO, V3::Z, 50.0, 6, 5);
    let Mat4(pose) = cam.pose;
    let ic = IrCamera { pose, fx: cam.fx, fy: cam.fy, cx: cam.cx, cy: cam.cy, width: 6, height: 5 };
    (cam, ic)
}

#[test]
fn render_through_handle_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = tiny_model();
    save_checkpoint(&model, &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut h: *mut IrModel = ptr::null_mut();
    assert_eq!(unsafe { ir_model_load(cpath.as_ptr(), &mut h) }, IrStatus::Ok);
    assert!(!h.is_null());
    let mut n = 0usize;
    assert_eq!(unsafe { ir_model_n_illum(h, &mut n) }, IrStatus::Ok);
    assert_eq!(n, 1);

    let (cam, ic) = camera();
    let o = opts();
    let mut out = vec![0f32; 6 * 5 * 3];
    assert_eq!(unsafe { ir_render(h, &ic, 0, &o, out.as_mut_ptr(), out.len()) }, IrStatus::Ok);

    // the library on the reloaded (f32-rounded) model gives the same pixels
    let loaded = invrender::nfield::load_checkpoint(&path).unwrap();
    let mut cfg = invrender::sceneio::RenderConfig::default();
    cfg.shading.samples = 8;
    cfg.shading.seed = 3;
    cfg.march.n_uniform = 24;
    cfg.march.n_adaptive = 8;
    cfg.grid_res = [10; 3];
    cfg.export_res = [8, 16];
    cfg.seed = 3;
    let mesh = scene_mesh(&loaded, &cfg);
    let r = Renderer::new(&loaded, &mesh, cfg).render_novel_view(&cam, 0).unwrap();
    for (a, b) in out.iter().zip(&r.ldr.data) {
        assert_eq!(*a, *b as f32);
    }

    // relighting with the exported sky reproduces the render
    let mut env = vec![0f32; 8 * 16 * 3];
    assert_eq!(unsafe { ir_export_envmap(h, 0, 8, 16, env.as_mut_ptr(), env.len()) }, IrStatus::Ok);
    let mut relit = vec![0f32; out.len()];
    assert_eq!(unsafe { ir_relight(h, &ic, env.as_ptr(), 16, 8, &o, relit.as_mut_ptr(), relit.len()) }, IrStatus::Ok);
    let max_diff = out.iter().zip(&relit).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
    // the export went through f32
    assert!(max_diff < 1e-4, "{max_diff}");

    // errors leave a message behind
    let mut small = vec![0f32; 3];
    assert_eq!(unsafe { ir_render(h, &ic, 0, &o, small.as_mut_ptr(), small.len()) }, IrStatus::InvalidArgument);
    let msg = unsafe { CStr::from_ptr(ir_last_error()) }.to_str().unwrap().to_string();
    assert!(msg.contains("output buffer"), "{msg}");
    assert_eq!(unsafe { ir_render(h, &ic, 5, &o, out.as_mut_ptr(), out.len()) }, IrStatus::InvalidArgument);
    let mut bad = ic;
    bad.pose[0] = 3.0;
    assert_eq!(unsafe { ir_render(h, &bad, 0, &o, out.as_mut_ptr(), out.len()) }, IrStatus::InvalidArgument);
    unsafe { ir_model_free(h) };
}

#[test]
fn corrupt_checkpoint_is_invalid_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h: *mut IrModel = ptr::null_mut();
    assert_eq!(unsafe { ir_model_load(cpath.as_ptr(), &mut h) }, IrStatus::InvalidFile);
    assert!(h.is_null());
    assert!(!unsafe { CStr::from_ptr(ir_last_error()) }.to_bytes().is_empty());
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/invrender.h");
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
