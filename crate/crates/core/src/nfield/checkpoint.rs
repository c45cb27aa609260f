use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelSpec};

const MAGIC: &[u8; 8] = b"INVRCKPT";
const VERSION: u32 = 1;
const MAX_NAME: usize = 4096;
const MAX_DIMS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("invalid embedded configuration: {0}")]
    Config(String),
    #[error("checkpoint segment `{0}` is malformed: {1}")]
    Segment(String, String),
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Truncated(what),
        _ => CheckpointError::Io(e),
    })
}

fn read_u32(r: &mut impl Read, what: &'static str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &'static str) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Serialize the model. Values are stored as little-endian `f32`.
pub fn write_checkpoint(model: &Model, w: &mut impl Write) -> Result<(), CheckpointError> {
    let cfg = toml::to_string(&model.spec).map_err(|e| CheckpointError::Config(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    let segs = model.store.segments();
    w.write_all(&(segs.len() as u32).to_le_bytes())?;
    for s in segs {
        w.write_all(&(s.name.len() as u32).to_le_bytes())?;
        w.write_all(s.name.as_bytes())?;
        w.write_all(&(s.shape.len() as u32).to_le_bytes())?;
        for &d in &s.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * s.len());
        for &v in &model.store.values()[s.range()] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Model, CheckpointError> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic, "header")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(r, "header")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let cfg_len = read_u32(r, "config length")? as usize;
    if cfg_len > 1 << 24 {
        return Err(CheckpointError::Config(format!("config length {cfg_len} is implausible")));
    }
    let mut cfg = vec![0u8; cfg_len];
    read_exact(r, &mut cfg, "config")?;
    let cfg = String::from_utf8(cfg).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let spec: ModelSpec = toml::from_str(&cfg).map_err(|e| CheckpointError::Config(e.to_string()))?;
    if spec.n_illum == 0 || spec.bounds.is_degenerate() {
        return Err(CheckpointError::Config("degenerate bounds or zero illumination count".into()));
    }
    let mut model = Model::new(spec);

    let n = read_u32(r, "segment count")? as usize;
    if n != model.store.segments().len() {
        return Err(CheckpointError::Segment(
            "*".into(),
            format!("file has {n} segments, configuration implies {}", model.store.segments().len()),
        ));
    }
    for _ in 0..n {
        let len = read_u32(r, "segment name")? as usize;
        if len > MAX_NAME {
            return Err(CheckpointError::Segment("?".into(), format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        read_exact(r, &mut name, "segment name")?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Segment("?".into(), "name is not UTF-8".into()))?;
        let nd = read_u32(r, "segment shape")? as usize;
        if nd > MAX_DIMS {
            return Err(CheckpointError::Segment(name, format!("{nd} dimensions")));
        }
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(read_u64(r, "segment shape")? as usize);
        }
        let expected = model.store.segment(&name).ok_or_else(|| CheckpointError::Segment(name.clone(), "unknown segment".into()))?;
        if expected.shape != shape {
            return Err(CheckpointError::Segment(name, format!("shape {shape:?}, expected {:?}", expected.shape)));
        }
        let count = expected.len();
        let mut raw = vec![0u8; 4 * count];
        read_exact(r, &mut raw, "segment data")?;
        let data: Vec<f64> = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        model.store.set_segment(&name, &shape, &data).map_err(|e| CheckpointError::Segment(name.clone(), e.to_string()))?;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, CheckpointError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
