//! Pipeline configuration: a single TOML file with explicit keys only; no
//! environment-variable overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{FitConfig, LossWeights};
use crate::io::manifest::hash_bytes;
use crate::refine::RefineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene: SceneSection,
    pub fit: FitSection,
    pub extract: ExtractSection,
    pub refine: RefineSection,
    pub texture: TextureSection,
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub preset: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Nodes per axis of the parameter grid.
    pub grid: usize,
    /// Supervision render size in pixels.
    pub resolution: u32,
    /// Ray samples per pixel while fitting.
    pub samples: usize,
    /// Ray samples per pixel for the ground-truth targets.
    pub target_samples: usize,
    pub iters_a: usize,
    pub iters_b: usize,
    pub iters_c: usize,
    pub step_a: f64,
    pub step_b: f64,
    pub step_c: f64,
    pub stage_c_grid: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub dims: [usize; 3],
    pub extents: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    /// Target render size (typically several times the fit resolution).
    pub resolution: u32,
    pub target_samples: usize,
    pub steps: usize,
    pub step_size: f64,
    pub remesh_interval: usize,
    pub target_edge: f64,
    pub dilation_sigma: f64,
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureSection {
    /// Color-source render size.
    pub resolution: u32,
    pub target_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub samples: usize,
    /// Mask render size for the eight-view IoU protocol.
    pub resolution: u32,
    /// Reference extraction lattice for ground-truth layer meshes.
    pub gt_dims: [usize; 3],
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            preset: "basic".into(),
            seed: 42,
        }
    }
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            grid: 64,
            resolution: 64,
            samples: 80,
            target_samples: 160,
            iters_a: 400,
            iters_b: 450,
            iters_c: 30,
            step_a: 2e4,
            step_b: 2e4,
            step_c: 2e-2,
            stage_c_grid: [48, 48, 72],
        }
    }
}

impl Default for ExtractSection {
    fn default() -> Self {
        ExtractSection {
            dims: [100, 100, 150],
            extents: [0.7, 0.7, 1.05],
        }
    }
}

impl Default for RefineSection {
    fn default() -> Self {
        RefineSection {
            resolution: 256,
            target_samples: 192,
            steps: 120,
            step_size: 0.5,
            remesh_interval: 25,
            target_edge: 0.012,
            dilation_sigma: 0.03,
            clearance: 1.5e-3,
        }
    }
}

impl Default for TextureSection {
    fn default() -> Self {
        TextureSection {
            resolution: 256,
            target_samples: 192,
        }
    }
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            samples: 20000,
            resolution: 256,
            gt_dims: [144, 144, 216],
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scene: SceneSection::default(),
            fit: FitSection::default(),
            extract: ExtractSection::default(),
            refine: RefineSection::default(),
            texture: TextureSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Stable hash of the effective configuration (after any overrides).
    pub fn hash(&self) -> String {
        let canon = toml::to_string(self).expect("config serializes");
        hash_bytes(canon.as_bytes())
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            grid_dims: [self.fit.grid; 3],
            semantic_count: 3,
            resolution: self.fit.resolution,
            n_samples: self.fit.samples,
            target_samples: self.fit.target_samples,
            iters_stage_a: self.fit.iters_a,
            iters_stage_b: self.fit.iters_b,
            iters_stage_c: self.fit.iters_c,
            step_a: self.fit.step_a,
            step_b: self.fit.step_b,
            step_c: self.fit.step_c,
            beta: crate::scene::DEFAULT_BETA,
            convert_to_sdf: true,
            stage_c_dims: self.fit.stage_c_grid,
            stage_c_extents: self.extract.extents,
            weights: LossWeights::default(),
        }
    }

    pub fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            steps: self.refine.steps,
            step_size: self.refine.step_size,
            remesh_interval: self.refine.remesh_interval,
            target_edge: self.refine.target_edge,
            dilation_sigma: self.refine.dilation_sigma,
            clearance: self.refine.clearance,
            ..RefineConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_toml() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            [scene]
            preset = "skirted"
            seed = 7

            [fit]
            grid = 32
            "#,
        )
        .unwrap();
        assert_eq!(cfg.scene.preset, "skirted");
        assert_eq!(cfg.scene.seed, 7);
        assert_eq!(cfg.fit.grid, 32);
        assert_eq!(cfg.fit.resolution, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let out: std::result::Result<PipelineConfig, _> = toml::from_str("[scene]\nfoo = 1\n");
        assert!(out.is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = PipelineConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.scene.seed = 43;
        assert_ne!(a.hash(), b.hash());
    }
}
