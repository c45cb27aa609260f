//! Files in and out: cameras, image codecs, datasets, configs and the
//! synthetic scene generator.

mod camera;
mod config;
mod dataset;
mod pnm;
mod synth;

pub use camera::Camera;
pub use config::{RenderConfig, SceneConfig};
pub use synth::{generate, texel_centre, CameraRing, GtView, Primitive, Scene, SceneHit, Shape, SkySpec, SynthOutput, SynthSpec};
pub use dataset::{depth_to_text, parse_depth, Dataset, DepthRay, View};
pub use pnm::{
    decode_pfm, decode_pnm, encode_pfm, encode_pnm, read_pfm, read_pnm, save_hdr, save_ldr, write_pfm, write_pnm, Ldr,
    PfmImage,
};

use std::path::Path;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("truncated input: {0}")]
    Truncated(String),
}

impl IoError {
    /// Prefix the message with a file path.
    pub fn at(self, path: &Path) -> IoError {
        let p = path.display();
        match self {
            IoError::Io(m) => IoError::Io(format!("{p}: {m}")),
            IoError::Invalid(m) => IoError::Invalid(format!("{p}: {m}")),
            IoError::Truncated(m) => IoError::Truncated(format!("{p}: {m}")),
        }
    }
}
