use serde::{Deserialize, Serialize};

use super::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ArchConfig;

/// Where the regional level set loss is evaluated in stage two.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlsRegion {
    #[default]
    Constrained,
    WholeImage,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub clamp_eps: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossConfig::default();
        Self {
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            clamp_eps: d.clamp_eps,
        }
    }
}

/// Training hyperparameters; every field has a default so partial JSON works.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// The learning rate is multiplied by `lr_decay` at each listed epoch.
    pub decay_epochs: Vec<usize>,
    pub lr_decay: f64,
    /// First epoch of stage two.
    pub stage2_start: usize,
    /// End stage one early once the segmentation loss stops improving.
    pub plateau_switch: bool,
    pub rls_weight: f64,
    pub rounds: usize,
    pub seed: u64,
    /// Inclusive bounds on the long side of training and inference inputs.
    pub long_side: [usize; 2],
    pub batch: usize,
    /// Threshold used to binarize predictions between rounds.
    pub threshold: f64,
    pub arch: ArchConfig,
    pub loss: LossSection,
    pub rls_region: RlsRegion,
    /// `None` disables augmentation; samples are then only resized.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            lr: 1e-3,
            decay_epochs: vec![40, 60],
            lr_decay: 0.1,
            stage2_start: 40,
            plateau_switch: false,
            rls_weight: 0.1,
            rounds: 3,
            seed: 0,
            long_side: [32, 64],
            batch: 4,
            threshold: 0.5,
            arch: ArchConfig::default(),
            loss: LossSection::default(),
            rls_region: RlsRegion::Constrained,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.loss.lambda1,
            lambda2: self.loss.lambda2,
            rls_weight: self.rls_weight,
            clamp_eps: self.loss.clamp_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.rounds == 0 || self.batch == 0 {
            return bad("epochs, rounds and batch must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.stage2_start > self.epochs {
            return bad("stage2_start exceeds epochs");
        }
        let [lo, hi] = self.long_side;
        if lo < 4 || lo > hi || lo.div_ceil(4) * 4 > hi {
            return bad("long_side must contain a multiple of 4 that is at least 4");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        self.arch.validate()?;
        self.loss_config().validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}
