//! Run configuration: a TOML file with `[model]`, `[train]`, `[data]` and
//! `[eval]` sections. Every field has a default and unknown keys are errors.

use std::path::Path;

use face_core::model::ModelConfig;
use face_core::prep::{AugmentParams, OrderMode};
use face_core::tensor::optim::{OptimConfig, OptimizerKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Model(#[from] face_core::error::Error),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    /// Log a line every this many steps.
    pub log_every: u64,
    pub augment: AugmentParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 1e-3,
            weight_decay: 0.1,
            warmup_frac: 0.03,
            grad_clip: 1.0,
            seed: 0,
            optimizer: OptimizerKind::AdamW,
            beta1: 0.9,
            beta2: 0.95,
            checkpoint_every: 500,
            log_every: 50,
            augment: AugmentParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            kind: self.optimizer,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            ..OptimConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub order: OrderMode,
    /// Draw a fresh surface sample every step; otherwise each mesh keeps the
    /// cloud drawn with the run seed.
    pub resample_points: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { order: OrderMode::Zyx, resample_points: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Surface samples per mesh for Chamfer/Hausdorff.
    pub samples: usize,
    pub seed: u64,
    /// Face limit for greedy reconstruction (0: the model's max_faces).
    pub max_faces: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples: 4096, seed: 0, max_faces: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// The small configuration used for the overfit experiments.
    pub fn desk() -> Self {
        Self { model: ModelConfig::desk(), ..Self::default() }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        let t = &self.train;
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if t.steps < 1 {
            return bad("train.steps must be at least 1");
        }
        if t.batch_size < 1 {
            return bad("train.batch_size must be at least 1");
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad("train.lr must be positive");
        }
        if !(0.0..=1.0).contains(&t.warmup_frac) {
            return bad("train.warmup_frac must be in [0, 1]");
        }
        if t.grad_clip.is_nan() || t.grad_clip <= 0.0 {
            return bad("train.grad_clip must be positive");
        }
        if t.log_every < 1 {
            return bad("train.log_every must be at least 1");
        }
        if t.augment.up_axis > 2 || t.augment.scale_min > t.augment.scale_max || t.augment.scale_min <= 0.0 {
            return bad("train.augment needs up_axis in 0..3 and 0 < scale_min <= scale_max");
        }
        if self.eval.samples < 1 {
            return bad("eval.samples must be at least 1");
        }
        Ok(())
    }

    pub fn reconstruct_limit(&self) -> usize {
        if self.eval.max_faces == 0 {
            self.model.max_faces
        } else {
            self.eval.max_faces.min(self.model.max_faces)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for cfg in [RunConfig::default(), RunConfig::desk()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg = RunConfig::parse("[model]\nresolution = 32\n[train]\nsteps = 10\n[data]\norder = \"dfs\"\n").unwrap();
        assert_eq!(cfg.model.resolution, 32);
        assert_eq!(cfg.model.d_model, ModelConfig::default().d_model);
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.data.order, OrderMode::Dfs);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::parse("[model]\nresolutoin = 32\n").is_err());
        assert!(RunConfig::parse("[extra]\n").is_err());
        assert!(RunConfig::parse("[train.augment]\nspin = true\n").is_err());
    }

    #[test]
    fn invalid_values_are_errors() {
        assert!(RunConfig::parse("[train]\nsteps = 0\n").is_err());
        assert!(RunConfig::parse("[train]\nlr = -1.0\n").is_err());
        assert!(RunConfig::parse("[model]\nd_model = 30\nheads = 4\n").is_err());
        assert!(RunConfig::parse("[model]\nactivation = \"relu\"\n").is_err());
    }
}
