//! C ABI over a trained model.
//!
//! Every function returns an [`IrStatus`]; on failure the message is kept
//! per thread and read with [`ir_last_error`]. Handles are opaque and must
//! be released with [`ir_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use invrender::geomesh::MeshSnapshot;
use invrender::manipulate::{scene_mesh, Renderer};
use invrender::math::Mat4;
use invrender::nfield::{load_checkpoint, CheckpointError, Model};
use invrender::sceneio::{Camera, RenderConfig};
use invrender::shade::EnvMap;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrStatus {
    Ok = 0,
    NullPointer = 1,
    Io = 2,
    InvalidArgument = 3,
    InvalidFile = 4,
    Panic = 5,
}

/// Render settings.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IrRenderOptions {
    /// Secondary rays per pixel.
    pub samples: u32,
    pub march_uniform: u32,
    pub march_adaptive: u32,
    /// Marching-cubes resolution of the shadow mesh, per axis.
    pub grid_res: u32,
    /// Exported sky rows and columns.
    pub sky_height: u32,
    pub sky_width: u32,
    pub seed: u64,
}

/// Pinhole camera: world-from-camera pose (row-major, OpenCV axes) and intrinsics.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IrCamera {
    pub pose: [f64; 16],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Opaque model handle.
pub struct IrModel {
    model: Model,
    /// Shadow mesh and the grid resolution it was built at.
    mesh: Option<(u32, MeshSnapshot)>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("nul bytes removed"));
}

type Res<T> = Result<T, (IrStatus, String)>;

fn guard(f: impl FnOnce() -> Res<()>) -> IrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            IrStatus::Ok
        }
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            IrStatus::Panic
        }
    }
}

fn invalid(m: impl Into<String>) -> (IrStatus, String) {
    (IrStatus::InvalidArgument, m.into())
}

fn null(what: &str) -> (IrStatus, String) {
    (IrStatus::NullPointer, format!("`{what}` is null"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ir_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Defaults matching the command-line renderer.
#[no_mangle]
pub extern "C" fn ir_render_options_default() -> IrRenderOptions {
    let r = RenderConfig::default();
    IrRenderOptions {
        samples: r.shading.samples as u32,
        march_uniform: r.march.n_uniform as u32,
        march_adaptive: r.march.n_adaptive as u32,
        grid_res: r.grid_res[0] as u32,
        sky_height: r.export_res[0] as u32,
        sky_width: r.export_res[1] as u32,
        seed: r.seed,
    }
}

fn render_config(o: &IrRenderOptions) -> Res<RenderConfig> {
    if o.samples == 0 || o.march_uniform < 2 || o.grid_res < 2 || o.sky_height == 0 || o.sky_width == 0 {
        return Err(invalid("render options: samples, sky size must be positive; march_uniform and grid_res at least 2"));
    }
    let mut cfg = RenderConfig::default();
    cfg.shading.samples = o.samples as usize;
    cfg.shading.seed = o.seed;
    cfg.march.n_uniform = o.march_uniform as usize;
    cfg.march.n_adaptive = o.march_adaptive as usize;
    cfg.grid_res = [o.grid_res as usize; 3];
    cfg.export_res = [o.sky_height as usize, o.sky_width as usize];
    cfg.seed = o.seed;
    Ok(cfg)
}

fn camera(c: &IrCamera) -> Res<Camera> {
    let cam = Camera { pose: Mat4(c.pose), fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, width: c.width as usize, height: c.height as usize };
    cam.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(cam)
}

/// Load a checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ir_model_load(path: *const c_char, out: *mut *mut IrModel) -> IrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let model = load_checkpoint(Path::new(p)).map_err(|e| match e {
            CheckpointError::Io(_) => (IrStatus::Io, format!("{p}: {e}")),
            _ => (IrStatus::InvalidFile, format!("{p}: {e}")),
        })?;
        *out = Box::into_raw(Box::new(IrModel { model, mesh: None }));
        Ok(())
    })
}

/// Release a handle; null is ignored.
///
/// # Safety
/// `model` must come from [`ir_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ir_model_free(model: *mut IrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of illumination conditions (skies) of the model.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ir_model_n_illum(model: *const IrModel, out: *mut usize) -> IrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = m.model.n_illum();
        Ok(())
    })
}

/// Model and its shadow mesh at the configured resolution.
fn parts<'a>(m: &'a mut IrModel, cfg: &RenderConfig) -> (&'a Model, &'a MeshSnapshot) {
    let res = cfg.grid_res[0] as u32;
    if m.mesh.as_ref().is_none_or(|(r, _)| *r != res) {
        m.mesh = Some((res, scene_mesh(&m.model, cfg)));
    }
    (&m.model, &m.mesh.as_ref().expect("built above").1)
}

fn write_rgb(img: &invrender::image::Image, out: *mut f32, len: usize) -> Res<()> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < img.data.len() {
        return Err(invalid(format!("output buffer holds {len} floats, {} needed", img.data.len())));
    }
    // SAFETY: caller guarantees `len` writable floats
    let dst = unsafe { std::slice::from_raw_parts_mut(out, img.data.len()) };
    for (d, s) in dst.iter_mut().zip(&img.data) {
        *d = *s as f32;
    }
    Ok(())
}

/// Render a view with the standard pipeline into `out` (`width*height*3`
/// floats, tonemapped RGB in `[0,1]`, rows top to bottom).
///
/// # Safety
/// Pointers must be valid; `out` must hold `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn ir_render(
    model: *mut IrModel,
    cam: *const IrCamera,
    illum: usize,
    opts: *const IrRenderOptions,
    out: *mut f32,
    out_len: usize,
) -> IrStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let cam = camera(cam.as_ref().ok_or_else(|| null("cam"))?)?;
        let cfg = render_config(opts.as_ref().ok_or_else(|| null("opts"))?)?;
        if illum >= m.model.n_illum() {
            return Err(invalid(format!("illumination {illum} outside [0, {})", m.model.n_illum())));
        }
        let (model, mesh) = parts(m, &cfg);
        let r = Renderer::new(model, mesh, cfg).render_novel_view(&cam, illum).map_err(|e| invalid(e.to_string()))?;
        write_rgb(&r.ldr, out, out_len)
    })
}

/// Render under a user sky given as `env_height x env_width` RGB floats.
///
/// # Safety
/// Pointers must be valid; `env` holds `env_width*env_height*3` floats and
/// `out` holds `out_len` floats.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ir_relight(
    model: *mut IrModel,
    cam: *const IrCamera,
    env: *const f32,
    env_width: usize,
    env_height: usize,
    opts: *const IrRenderOptions,
    out: *mut f32,
    out_len: usize,
) -> IrStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let cam = camera(cam.as_ref().ok_or_else(|| null("cam"))?)?;
        let cfg = render_config(opts.as_ref().ok_or_else(|| null("opts"))?)?;
        if env.is_null() {
            return Err(null("env"));
        }
        if env_width == 0 || env_height == 0 {
            return Err(invalid("environment map size must be positive"));
        }
        let n = env_width.checked_mul(env_height).and_then(|v| v.checked_mul(3)).ok_or_else(|| invalid("environment map too large"))?;
        let src = std::slice::from_raw_parts(env, n);
        let mut map = EnvMap::new(env_width, env_height);
        map.data = src.iter().map(|&v| v as f64).collect();
        let (model, mesh) = parts(m, &cfg);
        let r = Renderer::new(model, mesh, cfg).relight(&cam, &map).map_err(|e| invalid(e.to_string()))?;
        write_rgb(&r.ldr, out, out_len)
    })
}

/// Export sky `illum` as `height x width` linear RGB floats.
///
/// # Safety
/// Pointers must be valid; `out` holds `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn ir_export_envmap(model: *const IrModel, illum: usize, height: usize, width: usize, out: *mut f32, out_len: usize) -> IrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if height == 0 || width == 0 {
            return Err(invalid("sky size must be positive"));
        }
        let img = m.model.export_envmap(illum, height, width).map_err(|e| invalid(e.to_string()))?;
        write_rgb(&img, out, out_len)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_are_reported() {
        unsafe {
            let mut h: *mut IrModel = ptr::null_mut();
            assert_eq!(ir_model_load(ptr::null(), &mut h), IrStatus::NullPointer);
            assert!(h.is_null());
            let msg = CStr::from_ptr(ir_last_error()).to_str().unwrap();
            assert!(msg.contains("path"));
            let mut n = 0;
            assert_eq!(ir_model_n_illum(ptr::null(), &mut n), IrStatus::NullPointer);
            ir_model_free(ptr::null_mut());
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let p = CString::new("/nonexistent/model.ckpt").unwrap();
        let mut h: *mut IrModel = ptr::null_mut();
        let s = unsafe { ir_model_load(p.as_ptr(), &mut h) };
        assert_eq!(s, IrStatus::Io);
        assert!(h.is_null());
    }

    #[test]
    fn options_default_are_valid() {
        assert!(render_config(&ir_render_options_default()).is_ok());
        let bad = IrRenderOptions { samples: 0, ..ir_render_options_default() };
        assert!(render_config(&bad).is_err());
    }
}
