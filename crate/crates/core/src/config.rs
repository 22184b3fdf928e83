//! Flat key-value run configuration shared by every command. Parsed from TOML
//! with unknown keys rejected, and validated as a whole before any work.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DepthSample, FeatureConfig, SegmentConfig, SegmentMode, DESCRIPTORS};
use crate::pipeline::PipelineConfig;
use crate::synth::{SceneSpec, Texture};
use crate::trainer::TrainConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Synthetic scenes.
    pub height: usize,
    pub width: usize,
    pub num_planes: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub texture: Texture,
    pub noise_sigma: f64,
    pub train_count: usize,
    pub test_count: usize,

    // Segmentation and features.
    pub target_n: usize,
    pub compactness: f64,
    pub segment_mode: SegmentMode,
    pub slic_iterations: usize,
    pub box_size: usize,
    pub patch_dim: usize,
    pub hist_bins: usize,
    pub depth_sample: DepthSample,
    pub gammas: [f64; DESCRIPTORS],

    /// Hidden layer widths; the input width follows from the features and the
    /// output is one unit.
    pub hidden: Vec<usize>,

    // Training.
    pub momentum: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub epochs: usize,
    pub dropout_keep: f64,
    pub beta_init: [f64; DESCRIPTORS],
    pub pretrain_epochs: usize,

    pub output_dir: PathBuf,
    /// Training seed: initialization, shuffling and dropout.
    pub seed: u64,
    /// Scene seed. Test scenes use `data_seed + TEST_SEED_OFFSET`.
    pub data_seed: u64,
}

pub const TEST_SEED_OFFSET: u64 = 1000;

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        let seg = SegmentConfig::default();
        let feat = FeatureConfig::default();
        let pipe = PipelineConfig::default();
        let train = TrainConfig::default();
        Self {
            height: scene.height,
            width: scene.width,
            num_planes: scene.num_planes,
            depth_min: scene.depth_range.0,
            depth_max: scene.depth_range.1,
            texture: Texture::Gradient,
            noise_sigma: scene.noise_sigma,
            train_count: 30,
            test_count: 10,
            target_n: seg.target_n,
            compactness: seg.compactness,
            segment_mode: seg.mode,
            slic_iterations: seg.iterations,
            box_size: feat.box_size,
            patch_dim: feat.patch_dim,
            hist_bins: feat.hist_bins,
            depth_sample: feat.depth_sample,
            gammas: pipe.gammas,
            hidden: vec![64, 32],
            momentum: train.momentum,
            lambda1: train.lambda1,
            lambda2: train.lambda2,
            lr0: train.lr0,
            lr_decay: train.lr_decay,
            lr_step: train.lr_step,
            epochs: train.epochs,
            dropout_keep: train.dropout_keep,
            beta_init: [0.5; DESCRIPTORS],
            pretrain_epochs: train.pretrain_epochs,
            output_dir: PathBuf::from("out"),
            seed: 0,
            data_seed: 1000,
        }
    }
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.scene_spec(0).validate().map_err(|e| invalid(&e))?;
        self.segment_config().validate().map_err(|e| invalid(&e))?;
        self.feature_config().validate().map_err(|e| invalid(&e))?;
        self.train_config().validate().map_err(|e| invalid(&e))?;
        if self.train_count == 0 {
            return Err(invalid(&"train_count must be at least 1"));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(invalid(&format!("gammas must be positive, found {g}")));
        }
        if self.hidden.contains(&0) {
            return Err(invalid(&"hidden widths must be positive"));
        }
        if self.pretrain_epochs > self.epochs {
            return Err(invalid(&"pretrain_epochs cannot exceed epochs"));
        }
        Ok(())
    }

    pub fn test_seed(&self) -> u64 {
        self.data_seed.wrapping_add(TEST_SEED_OFFSET)
    }

    pub fn scene_spec(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            height: self.height,
            width: self.width,
            num_planes: self.num_planes,
            depth_range: (self.depth_min, self.depth_max),
            texture: self.texture,
            seed,
            noise_sigma: self.noise_sigma,
        }
    }

    pub fn segment_config(&self) -> SegmentConfig {
        SegmentConfig {
            target_n: self.target_n,
            compactness: self.compactness,
            mode: self.segment_mode,
            iterations: self.slic_iterations,
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            box_size: self.box_size,
            patch_dim: self.patch_dim,
            hist_bins: self.hist_bins,
            depth_sample: self.depth_sample,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            segment: self.segment_config(),
            features: self.feature_config(),
            gammas: self.gammas,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            momentum: self.momentum,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lr0: self.lr0,
            lr_decay: self.lr_decay,
            lr_step: self.lr_step,
            epochs: self.epochs,
            dropout_keep: self.dropout_keep,
            seed: self.seed,
            beta_init: self.beta_init.to_vec(),
            pretrain_epochs: self.pretrain_epochs,
        }
    }

    /// Full layer widths for inputs of width `input`.
    pub fn widths(&self, input: usize) -> Vec<usize> {
        std::iter::once(input)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }
}
