use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::petl::PetlConfig;
use crate::spkback::MhfaConfig;
use crate::trainer::{ModelConfig, TrainConfig};

/// Input locations for a run. Relative paths resolve against the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    pub manifest: Option<PathBuf>,
    pub intermediate: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a training command needs; echoed verbatim into the output
/// directory as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backbone: BackboneConfig,
    /// Defaults to the constants matching `backbone`.
    pub mhfa: Option<MhfaConfig>,
    /// Overrides `train.petl` when present.
    pub petl: Option<PetlConfig>,
    pub train: TrainConfig,
    /// Second-stage settings for `two-stage`; defaults to `train`.
    pub stage2: Option<TrainConfig>,
    pub paths: RunPaths,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backbone: BackboneConfig::desk(),
            mhfa: None,
            petl: None,
            train: TrainConfig::default(),
            stage2: None,
            paths: RunPaths::default(),
            seed: 0,
            deterministic: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(format!("run config {}", path.display()), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [&mut p.manifest, &mut p.intermediate, &mut p.target, &mut p.checkpoint, &mut p.out] {
            if let Some(rel) = slot.as_ref().filter(|p| p.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            mhfa: self.mhfa.clone().unwrap_or_else(|| MhfaConfig::for_backbone(&self.backbone)),
        }
    }

    /// Stage configuration with the run-level seed and PETL override applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        if let Some(p) = &self.petl {
            t.petl = p.clone();
        }
        t
    }

    pub fn stage2_config(&self) -> TrainConfig {
        let mut t = self.stage2.clone().unwrap_or_else(|| self.train.clone());
        t.seed = self.seed;
        if let Some(p) = &self.petl {
            t.petl = p.clone();
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        let t = self.train_config();
        t.validate()?;
        t.petl.validate(&self.backbone)?;
        if self.stage2.is_some() {
            let s = self.stage2_config();
            s.validate()?;
            s.petl.validate(&self.backbone)?;
        }
        Ok(())
    }

    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("run config", e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
