//! Scene configuration file (TOML). Paths are relative to the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::math::Aabb;
use crate::nfield::{FieldConfig, ModelSpec};
use crate::optim::TrainConfig;
use crate::shade::ShadingConfig;
use crate::volren::MarchConfig;

use super::IoError;

/// Settings of every rendering path outside training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub march: MarchConfig,
    pub shading: ShadingConfig,
    /// Rows and columns of the exported sky.
    pub export_res: [usize; 2],
    /// Marching-cubes grid of the shadow mesh.
    pub grid_res: [usize; 3],
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            march: MarchConfig { jitter: false, ..MarchConfig::default() },
            shading: ShadingConfig::default(),
            export_res: [64, 128],
            grid_res: [128, 128, 128],
            seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.export_res.contains(&0) {
            return Err("render.export_res must be positive".into());
        }
        if self.grid_res.iter().any(|&r| r < 2) {
            return Err("render.grid_res must be at least 2 per axis".into());
        }
        if self.march.n_uniform < 2 {
            return Err("render.march.n_uniform must be at least 2".into());
        }
        if self.shading.samples == 0 {
            return Err("render.shading.samples must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub holdout: Option<PathBuf>,
    pub output: PathBuf,
    pub bounds: Aabb,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fields: FieldConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub render: RenderConfig,
}

impl SceneConfig {
    pub fn parse(text: &str, base: &Path) -> Result<SceneConfig, IoError> {
        let mut cfg: SceneConfig = toml::from_str(text).map_err(|e| IoError::Invalid(e.to_string()))?;
        cfg.dataset = base.join(&cfg.dataset);
        cfg.output = base.join(&cfg.output);
        cfg.holdout = cfg.holdout.map(|h| base.join(h));
        cfg.validate().map_err(IoError::Invalid)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SceneConfig, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        SceneConfig::parse(&text, base).map_err(|e| e.at(path))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.bounds.is_degenerate() {
            return Err("bounds must have positive extent on every axis".into());
        }
        self.train.validate()?;
        self.render.validate()
    }

    pub fn model_spec(&self, n_illum: usize, n_images: usize) -> ModelSpec {
        ModelSpec { fields: self.fields.clone(), bounds: self.bounds, n_illum, n_images }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "dataset = \"data\"\noutput = \"out\"\n[bounds]\nmin = [-1.0, -1.0, -1.0]\nmax = [1.0, 1.0, 1.0]\n";

    #[test]
    fn paths_are_relative_to_file() {
        let c = SceneConfig::parse(MINIMAL, Path::new("/x/y")).unwrap();
        assert_eq!(c.dataset, PathBuf::from("/x/y/data"));
        assert_eq!(c.output, PathBuf::from("/x/y/out"));
        assert_eq!(c.render.export_res, [64, 128]);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let bad = format!("{MINIMAL}\n[train]\nbatchh = 3\n");
        assert!(SceneConfig::parse(&bad, Path::new(".")).is_err());
        let bad = format!("{MINIMAL}\n[train]\nbatch = 0\n");
        assert!(matches!(SceneConfig::parse(&bad, Path::new(".")), Err(IoError::Invalid(_))));
        let bad = MINIMAL.replace("max = [1.0, 1.0, 1.0]", "max = [1.0, 1.0, -1.0]");
        assert!(SceneConfig::parse(&bad, Path::new(".")).is_err());
    }
}
