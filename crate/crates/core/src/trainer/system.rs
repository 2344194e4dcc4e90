use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneModel, LayerOutputs};
use crate::error::{CheckpointError, Error, Result};
use crate::numcore::checkpoint::{load_checkpoint, save_checkpoint_with_meta};
use crate::numcore::rng::{hash_str, mix_seed};
use crate::numcore::{Graph, ParamGroup, ParamStore, Scalar, Var};
use crate::petl::{apply_petl, PetlConfig, PetlMode};
use crate::spkback::aam::{self, AamHead, CLASSES};
use crate::spkback::{self, mhfa_graph, MhfaVars};

use super::config::ModelConfig;

/// Checkpoint metadata written next to the parameter groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub petl: Option<PetlConfig>,
    /// Training speakers, in head-column order.
    pub speakers: Vec<String>,
    /// Learning rate of the last completed epoch.
    pub final_lr: Option<f64>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Backbone (with any PETL modules), pooling back-end and classification head.
#[derive(Clone, Debug)]
pub struct SpeakerSystem {
    pub model: ModelConfig,
    pub backbone: BackboneModel,
    /// `backend.*` groups plus `head.classes`.
    pub backend: ParamStore,
    pub speakers: Vec<String>,
}

impl SpeakerSystem {
    /// Fresh random system, instrumented with `petl`.
    pub fn new(model: &ModelConfig, petl: &PetlConfig, speakers: Vec<String>, seed: u64) -> Result<Self> {
        model.validate()?;
        let backbone = BackboneModel::new(model.backbone.clone(), mix_seed(seed, hash_str("backbone")))?;
        let backbone = apply_petl(backbone, petl, mix_seed(seed, hash_str("petl")))?;
        let mut sys = SpeakerSystem {
            model: model.clone(),
            backbone,
            backend: fresh_backend(model, seed)?,
            speakers: Vec::new(),
        };
        sys.reset_head(speakers, seed)?;
        Ok(sys)
    }

    /// Replaces the classification head with a fresh one for `speakers`.
    pub fn reset_head(&mut self, speakers: Vec<String>, seed: u64) -> Result<()> {
        if speakers.len() < 2 {
            return Err(Error::Input("training needs at least 2 speakers".into()));
        }
        self.backend.remove_prefix("head.");
        let head = AamHead::new(
            self.model.mhfa.d_emb,
            speakers.len(),
            aam::DEFAULT_MARGIN,
            aam::DEFAULT_SCALE,
            mix_seed(seed, hash_str(CLASSES)),
        )?;
        self.backend.insert(head.to_group(true))?;
        self.speakers = speakers;
        Ok(())
    }

    pub fn petl(&self) -> Option<&PetlConfig> {
        self.backbone.petl.as_ref()
    }

    /// Every group: backbone, PETL, back-end, head.
    pub fn groups(&self) -> impl Iterator<Item = &ParamGroup> {
        self.backbone.params.groups().iter().chain(self.backend.groups())
    }

    pub fn groups_mut(&mut self) -> impl Iterator<Item = &mut ParamGroup> {
        self.backbone.params.iter_mut().chain(self.backend.iter_mut())
    }

    pub fn to_groups(&self) -> Vec<ParamGroup> {
        self.groups().cloned().collect()
    }

    pub fn group(&self, name: &str) -> Result<&ParamGroup> {
        self.backbone.params.get(name).or_else(|_| self.backend.get(name))
    }

    pub fn meta(&self, final_lr: Option<f64>, extra: serde_json::Value) -> CheckpointMeta {
        CheckpointMeta {
            model: self.model.clone(),
            petl: self.petl().cloned(),
            speakers: self.speakers.clone(),
            final_lr,
            extra,
        }
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        let meta = serde_json::to_value(meta).map_err(|e| Error::json("checkpoint meta", e))?;
        save_checkpoint_with_meta(&self.to_groups(), Some(&meta), path)
    }

    /// Restores a system exactly as saved.
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let ckpt = load_checkpoint(path)?;
        let meta: CheckpointMeta = ckpt
            .meta
            .clone()
            .ok_or_else(|| CheckpointError::Architecture("checkpoint carries no model metadata".into()))
            .and_then(|m| {
                serde_json::from_value(m).map_err(|e| CheckpointError::Architecture(format!("bad metadata: {e}")))
            })?;
        let sys = Self::from_groups(&meta.model, meta.petl.clone(), meta.speakers.clone(), &ckpt.groups)?;
        Ok((sys, meta))
    }

    pub fn from_groups(
        model: &ModelConfig,
        petl: Option<PetlConfig>,
        speakers: Vec<String>,
        groups: &[ParamGroup],
    ) -> Result<Self> {
        let backbone = BackboneModel::from_groups(model.backbone.clone(), petl, groups)?;
        let mut backend = ParamStore::new();
        for spec in spkback::layout(&model.mhfa, &model.backbone) {
            let g = groups
                .iter()
                .find(|g| g.name == spec.name)
                .ok_or_else(|| CheckpointError::Architecture(format!("missing parameter {}", spec.name)))?;
            if g.tensor.shape() != spec.shape.as_slice() {
                return Err(CheckpointError::Architecture(format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.name,
                    g.tensor.shape(),
                    spec.shape
                ))
                .into());
            }
            backend.insert(g.clone())?;
        }
        if let Some(h) = groups.iter().find(|g| g.name == CLASSES) {
            if h.tensor.shape() != [model.mhfa.d_emb, speakers.len()] {
                return Err(CheckpointError::Architecture(format!(
                    "head has shape {:?} for {} speakers",
                    h.tensor.shape(),
                    speakers.len()
                ))
                .into());
            }
            backend.insert(h.clone())?;
        }
        Ok(SpeakerSystem {
            model: model.clone(),
            backbone,
            backend,
            speakers,
        })
    }

    /// Starts a new training stage from a stored system: backbone and back-end
    /// weights are carried over, the model is instrumented per `petl` (stored
    /// PETL groups are kept only when the stored configuration is identical),
    /// and the head is kept only if the speaker list is unchanged.
    pub fn continue_from(path: &Path, petl: &PetlConfig, speakers: Vec<String>, seed: u64) -> Result<Self> {
        let (stored, meta) = Self::load(path)?;
        let same_petl = meta.petl.as_ref() == Some(petl);
        let mut sys = if same_petl {
            let mut s = stored;
            let freeze = petl.mode.freezes_backbone();
            s.backbone.params.set_trainable("backbone.", !freeze);
            s.backbone.params.set_trainable("petl.", true);
            s
        } else {
            let stored_has_modules = meta
                .petl
                .as_ref()
                .is_some_and(|p| !matches!(p.mode, PetlMode::Full | PetlMode::Fixed));
            if stored_has_modules {
                return Err(Error::Contract(format!(
                    "checkpoint is instrumented as {}; cannot re-instrument as {}",
                    meta.petl.as_ref().map(PetlConfig::label).unwrap_or_default(),
                    petl.label()
                )));
            }
            let plain: Vec<ParamGroup> = stored
                .backbone
                .params
                .groups()
                .iter()
                .filter(|g| g.name.starts_with("backbone."))
                .cloned()
                .collect();
            let backbone = BackboneModel::from_groups(meta.model.backbone.clone(), None, &plain)?;
            let backbone = apply_petl(backbone, petl, mix_seed(seed, hash_str("petl")))?;
            SpeakerSystem {
                model: meta.model.clone(),
                backbone,
                backend: stored.backend,
                speakers: stored.speakers,
            }
        };
        sys.backend.set_trainable("", true);
        let keep_head = sys.backend.contains(CLASSES) && sys.speakers == speakers;
        if !keep_head {
            sys.reset_head(speakers, seed)?;
        }
        Ok(sys)
    }

    /// Records the `1 x d_emb` embedding of `waveform`.
    pub fn embed_graph<T: Scalar>(&self, g: &mut Graph<T>, waveform: &[f32]) -> Result<Var> {
        let layers = self.backbone.encode_graph(g, waveform)?;
        let vars = MhfaVars::bind(g, &self.backend)?;
        mhfa_graph(g, vars, &layers)
    }

    pub fn embed(&self, waveform: &[f32]) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::inference();
        let e = self.embed_graph(&mut g, waveform)?;
        Ok(g.value(e).data().to_vec())
    }

    pub fn encode_layers(&self, waveform: &[f32]) -> Result<LayerOutputs> {
        self.backbone.encode_layers(waveform)
    }
}

fn fresh_backend(model: &ModelConfig, seed: u64) -> Result<ParamStore> {
    let s = mix_seed(seed, hash_str("backend"));
    ParamStore::from_groups(
        spkback::layout(&model.mhfa, &model.backbone)
            .iter()
            .map(|spec| spec.materialize(s, true))
            .collect(),
    )
}
