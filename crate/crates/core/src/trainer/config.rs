use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::datagen::AugmentConfig;
use crate::error::{Error, Result};
use crate::petl::PetlConfig;
use crate::spkback::aam::{DEFAULT_MARGIN, DEFAULT_SCALE};
use crate::spkback::MhfaConfig;

/// Batch size used in the original large-scale runs; the desk default is 32.
pub const LARGE_SCALE_BATCH_SIZE: usize = 120;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay_per_epoch: f64,
    pub batch_size: usize,
    pub crop_s: f64,
    pub margin: f64,
    pub scale: f64,
    pub seed: u64,
    pub petl: PetlConfig,
    pub init_from: Option<PathBuf>,
    pub optimizer: OptimizerKind,
    pub augment: AugmentConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            base_lr: 1e-3,
            lr_decay_per_epoch: 0.95,
            batch_size: 32,
            crop_s: 3.0,
            margin: DEFAULT_MARGIN,
            scale: DEFAULT_SCALE,
            seed: 0,
            petl: PetlConfig::full(),
            init_from: None,
            optimizer: OptimizerKind::default(),
            augment: AugmentConfig::default(),
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_per_epoch {} outside (0, 1]",
                self.lr_decay_per_epoch
            )));
        }
        if self.base_lr < 0.0 || !self.base_lr.is_finite() {
            return Err(Error::Config(format!("invalid base_lr {}", self.base_lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.crop_s <= 0.0 {
            return Err(Error::Config("crop_s must be positive".into()));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) || self.scale <= 0.0 {
            return Err(Error::Config(format!(
                "invalid margin/scale {}/{}",
                self.margin, self.scale
            )));
        }
        Ok(())
    }

    /// `base_lr * decay^epoch`, epochs counted from 0.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_decay_per_epoch.powi(epoch as i32)
    }

    pub fn final_lr(&self) -> f64 {
        self.lr_at(self.epochs - 1)
    }
}

/// Large-margin continuation on top of a trained checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmFtConfig {
    pub extra_epochs: usize,
    pub crop_s: f64,
    pub margin: f64,
}

impl Default for LmFtConfig {
    fn default() -> Self {
        LmFtConfig {
            extra_epochs: 2,
            crop_s: 5.0,
            margin: 0.5,
        }
    }
}

/// Architecture of the whole speaker system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub mhfa: MhfaConfig,
}

impl ModelConfig {
    pub fn for_backbone(backbone: BackboneConfig) -> Self {
        let mhfa = MhfaConfig::for_backbone(&backbone);
        ModelConfig { backbone, mhfa }
    }

    pub fn desk() -> Self {
        Self::for_backbone(BackboneConfig::desk())
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.mhfa.validate()
    }
}
