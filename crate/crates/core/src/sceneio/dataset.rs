//! Capture datasets on disk.
//!
//! ```text
//! <dir>/meta             TOML: n_illum and one [[image]] {name, illum} per view
//! <dir>/images/<n>.ppm   8-bit RGB
//! <dir>/poses/<n>.txt    16 row-major world-from-camera entries, fx fy cx cy [w h]
//! <dir>/depth/<n>.txt    optional, one ray per line: ox oy oz dx dy dz range
//! <dir>/semantic/<n>.pgm optional class ids
//! <dir>/skymask/<n>.pgm  optional, non-zero marks sky
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::math::V3;
use crate::nfield::SemanticClass;

use super::{read_pnm, write_pnm, Camera, IoError, Ldr};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRay {
    pub o: V3,
    /// Unit direction.
    pub d: V3,
    pub range: f64,
}

#[derive(Debug, Clone)]
pub struct View {
    pub name: String,
    /// LDR pixels in `[0,1]`, 3 channels.
    pub image: Image,
    pub camera: Camera,
    pub illum: usize,
    pub depth: Option<Vec<DepthRay>>,
    /// Class id per pixel.
    pub semantic: Option<Vec<u8>>,
    /// True on sky pixels.
    pub skymask: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub n_illum: usize,
    pub views: Vec<View>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    n_illum: usize,
    #[serde(default, rename = "image")]
    images: Vec<MetaImage>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaImage {
    name: String,
    #[serde(default)]
    illum: usize,
}

fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))
}

pub fn parse_depth(text: &str) -> Result<Vec<DepthRay>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| IoError::Invalid(format!("line {}: `{t}` is not a number", ln + 1))))
            .collect::<Result<_, _>>()?;
        if v.len() != 7 {
            return Err(IoError::Invalid(format!("line {}: expected 7 numbers (origin, direction, range), found {}", ln + 1, v.len())));
        }
        let d = V3::new(v[3], v[4], v[5]);
        let len = d.length();
        if !(len > 0.0) || !v.iter().all(|x| x.is_finite()) {
            return Err(IoError::Invalid(format!("line {}: direction must be finite and non-zero", ln + 1)));
        }
        if !(v[6] > 0.0) {
            return Err(IoError::Invalid(format!("line {}: depth range must be positive, got {}", ln + 1, v[6])));
        }
        out.push(DepthRay { o: V3::new(v[0], v[1], v[2]), d: d * (1.0 / len), range: v[6] });
    }
    Ok(out)
}

pub fn depth_to_text(rays: &[DepthRay]) -> String {
    let mut s = String::new();
    for r in rays {
        s.push_str(&format!("{:?} {:?} {:?} {:?} {:?} {:?} {:?}\n", r.o.x, r.o.y, r.o.z, r.d.x, r.d.y, r.d.z, r.range));
    }
    s
}

fn load_mask(path: &Path, w: usize, h: usize, what: &str) -> Result<Option<Vec<u8>>, IoError> {
    if !path.exists() {
        return Ok(None);
    }
    let m = read_pnm(path)?;
    if m.channels != 1 || m.width != w || m.height != h {
        return Err(IoError::Invalid(format!(
            "{}: {what} must be a {w}x{h} PGM, got {}x{} with {} channels",
            path.display(),
            m.width,
            m.height,
            m.channels
        )));
    }
    Ok(Some(m.data))
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset, IoError> {
        let meta_path = dir.join("meta");
        let meta: Meta =
            toml::from_str(&read_text(&meta_path)?).map_err(|e| IoError::Invalid(format!("{}: {e}", meta_path.display())))?;
        if meta.n_illum == 0 {
            return Err(IoError::Invalid(format!("{}: n_illum must be at least 1", meta_path.display())));
        }
        if meta.images.is_empty() {
            return Err(IoError::Invalid(format!("{}: no images listed", meta_path.display())));
        }
        let mut views = Vec::with_capacity(meta.images.len());
        for mi in &meta.images {
            let name = &mi.name;
            if mi.illum >= meta.n_illum {
                return Err(IoError::Invalid(format!("image `{name}`: illumination index {} outside [0, {})", mi.illum, meta.n_illum)));
            }
            let img_path = dir.join("images").join(format!("{name}.ppm"));
            let ldr = read_pnm(&img_path)?;
            if ldr.channels != 3 {
                return Err(IoError::Invalid(format!("{}: expected an RGB PPM", img_path.display())));
            }
            let pose_path = dir.join("poses").join(format!("{name}.txt"));
            if !pose_path.exists() {
                return Err(IoError::Invalid(format!("image `{name}`: missing pose file {}", pose_path.display())));
            }
            let camera = Camera::parse(&read_text(&pose_path)?, Some((ldr.width, ldr.height))).map_err(|e| e.at(&pose_path))?;
            if (camera.width, camera.height) != (ldr.width, ldr.height) {
                return Err(IoError::Invalid(format!(
                    "image `{name}`: pose size {}x{} does not match image {}x{}",
                    camera.width, camera.height, ldr.width, ldr.height
                )));
            }
            let depth_path = dir.join("depth").join(format!("{name}.txt"));
            let depth = if depth_path.exists() { Some(parse_depth(&read_text(&depth_path)?).map_err(|e| e.at(&depth_path))?) } else { None };
            let sem_path = dir.join("semantic").join(format!("{name}.pgm"));
            let semantic = load_mask(&sem_path, ldr.width, ldr.height, "semantic map")?;
            if let Some(s) = &semantic {
                if let Some(bad) = s.iter().find(|&&c| SemanticClass::from_id(c).is_none()) {
                    return Err(IoError::Invalid(format!("{}: unknown class id {bad}", sem_path.display())));
                }
            }
            let skymask = load_mask(&dir.join("skymask").join(format!("{name}.pgm")), ldr.width, ldr.height, "sky mask")?
                .map(|m| m.into_iter().map(|v| v != 0).collect());
            views.push(View { name: name.clone(), image: ldr.to_image(), camera, illum: mi.illum, depth, semantic, skymask });
        }
        Ok(Dataset { n_illum: meta.n_illum, views })
    }

    pub fn save(&self, dir: &Path) -> Result<(), IoError> {
        let io = |p: &Path, e: std::io::Error| IoError::Io(format!("{}: {e}", p.display()));
        for sub in ["images", "poses", "depth", "semantic", "skymask"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
        }
        let meta = Meta {
            n_illum: self.n_illum,
            images: self.views.iter().map(|v| MetaImage { name: v.name.clone(), illum: v.illum }).collect(),
        };
        let meta_path = dir.join("meta");
        let text = toml::to_string(&meta).map_err(|e| IoError::Invalid(e.to_string()))?;
        std::fs::write(&meta_path, text).map_err(|e| io(&meta_path, e))?;
        for v in &self.views {
            let (w, h) = (v.image.width, v.image.height);
            write_pnm(&Ldr::from_image(&v.image), &dir.join("images").join(format!("{}.ppm", v.name)))?;
            let p = dir.join("poses").join(format!("{}.txt", v.name));
            std::fs::write(&p, v.camera.to_text()).map_err(|e| io(&p, e))?;
            if let Some(d) = &v.depth {
                let p = dir.join("depth").join(format!("{}.txt", v.name));
                std::fs::write(&p, depth_to_text(d)).map_err(|e| io(&p, e))?;
            }
            if let Some(s) = &v.semantic {
                write_pnm(&Ldr { width: w, height: h, channels: 1, data: s.clone() }, &dir.join("semantic").join(format!("{}.pgm", v.name)))?;
            }
            if let Some(m) = &v.skymask {
                let data = m.iter().map(|&s| if s { 255 } else { 0 }).collect();
                write_pnm(&Ldr { width: w, height: h, channels: 1, data }, &dir.join("skymask").join(format!("{}.pgm", v.name)))?;
            }
        }
        Ok(())
    }

    pub fn has_depth(&self) -> bool {
        self.views.iter().any(|v| v.depth.as_ref().is_some_and(|d| !d.is_empty()))
    }
}
