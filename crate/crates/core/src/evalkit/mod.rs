//! Trial scoring, equal error rate and detection cost.

pub mod metrics;
pub mod scoring;

use std::path::Path;

pub use metrics::{compute_eer, compute_min_dcf, DcfParams, MetricsReport, ScoreSet};
pub use scoring::{score_trials, write_scores, ScoredTrial};

use crate::datagen::{Manifest, TrialList};
use crate::error::{Error, Result};
use crate::trainer::SpeakerSystem;

/// Loads `ckpt`, scores `trials`, and optionally writes `scores.txt` and
/// `metrics.json` under `out`.
pub fn evaluate(ckpt: &Path, manifest: &Manifest, trials: &TrialList, out: Option<&Path>) -> Result<MetricsReport> {
    let (system, _) = SpeakerSystem::load(ckpt)?;
    evaluate_system(&system, manifest, trials, out)
}

pub fn evaluate_system(
    system: &SpeakerSystem,
    manifest: &Manifest,
    trials: &TrialList,
    out: Option<&Path>,
) -> Result<MetricsReport> {
    let (set, scored) = score_trials(system, manifest, trials)?;
    let report = MetricsReport::compute(&set)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_scores(&dir.join("scores.txt"), &scored)?;
        let p = dir.join("metrics.json");
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::json("metrics", e))?;
        std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}
