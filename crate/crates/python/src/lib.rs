//! Python bindings for the `petl_sv` crate.

use std::path::PathBuf;

use petl_sv::backbone::BackboneConfig;
use petl_sv::datagen::{desk_corpora, make_corpus, make_trials, CorpusSpec, Domain, Manifest, TrialList};
use petl_sv::evalkit::{self, DcfParams, MetricsReport, ScoreSet};
use petl_sv::petl::{count_params as census, PetlConfig, PetlMode};
use petl_sv::trainer::{self, ModelConfig, SpeakerSystem, TrainConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: petl_sv::Error) -> PyErr {
    match e {
        petl_sv::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (v.to_string(),))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let text: String = match obj {
        Some(o) => py.import("json")?.call_method1("dumps", (o,))?.extract()?,
        None => "{}".into(),
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn petl_config(mode: &str, dim: usize, l: usize) -> PyResult<PetlConfig> {
    Ok(match PetlMode::parse(mode).map_err(err)? {
        PetlMode::Full => PetlConfig::full(),
        PetlMode::Fixed => PetlConfig::fixed(),
        PetlMode::Bottleneck => PetlConfig::bottleneck(dim),
        PetlMode::Prefix => PetlConfig::prefix(l),
        PetlMode::Mam => PetlConfig::mam(dim, l),
    })
}

/// Parameter census of a preset under a PETL mode, as a dict.
#[pyfunction]
#[pyo3(signature = (backbone = "base", petl = "mam", dim = 256, l = 40))]
fn count_params(py: Python<'_>, backbone: &str, petl: &str, dim: usize, l: usize) -> PyResult<Py<PyAny>> {
    let bb = BackboneConfig::preset(backbone).map_err(err)?;
    let cfg = petl_config(petl, dim, l)?;
    cfg.validate(&bb).map_err(err)?;
    to_py(py, &census(&bb, &cfg).to_json())
}

/// Equal error rate of `scores` against boolean target labels.
#[pyfunction]
fn compute_eer(scores: Vec<f64>, is_target: Vec<bool>) -> PyResult<f64> {
    let s = ScoreSet::new(scores, is_target).map_err(err)?;
    evalkit::compute_eer(&s).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (scores, is_target, p_tar = 0.01, c_miss = 1.0, c_fa = 1.0))]
fn compute_min_dcf(scores: Vec<f64>, is_target: Vec<bool>, p_tar: f64, c_miss: f64, c_fa: f64) -> PyResult<f64> {
    let s = ScoreSet::new(scores, is_target).map_err(err)?;
    let p = DcfParams::new(p_tar, c_miss, c_fa).map_err(err)?;
    evalkit::compute_min_dcf(&s, &p).map_err(err)
}

/// Writes the four desk corpora under `out`; returns their manifest paths.
#[pyfunction]
#[pyo3(signature = (out, seed = 0))]
fn synth_desk_corpora(out: PathBuf, seed: u64) -> PyResult<Vec<PathBuf>> {
    desk_corpora(seed)
        .iter()
        .map(|spec| {
            let dir = out.join(&spec.name);
            make_corpus(spec, Some(&dir)).map_err(err)?;
            Ok(dir.join("manifest.jsonl"))
        })
        .collect()
}

/// Small in-memory corpus written to `out`: manifest, WAVs and trial list.
#[pyfunction]
#[pyo3(signature = (out, domain = "B", n_speakers = 4, utts_per_speaker = 4, seed = 0, duration_s = 1.0))]
fn synth_corpus(
    out: PathBuf,
    domain: &str,
    n_speakers: usize,
    utts_per_speaker: usize,
    seed: u64,
    duration_s: f64,
) -> PyResult<PathBuf> {
    let domain = match domain {
        "A" | "a" => Domain::A,
        "B" | "b" => Domain::B,
        other => return Err(PyValueError::new_err(format!("unknown domain {other:?}"))),
    };
    let name = out.file_name().and_then(|n| n.to_str()).unwrap_or("corpus").to_string();
    let spec = CorpusSpec {
        duration_s: (duration_s, duration_s),
        ..CorpusSpec::new(&name, seed, domain, n_speakers, utts_per_speaker)
    };
    let (m, _) = make_corpus(&spec, Some(&out)).map_err(err)?;
    make_trials(&m, seed).map_err(err)?.save(&out.join("trials.txt")).map_err(err)?;
    Ok(out.join("manifest.jsonl"))
}

/// Trains on a manifest. `config` is a dict with `TrainConfig` fields.
#[pyfunction]
#[pyo3(signature = (manifest, out, config = None, backbone = "desk"))]
fn train(
    py: Python<'_>,
    manifest: PathBuf,
    out: PathBuf,
    config: Option<&Bound<'_, PyAny>>,
    backbone: &str,
) -> PyResult<Py<PyAny>> {
    let cfg: TrainConfig = from_py(py, config)?;
    let model = ModelConfig::for_backbone(BackboneConfig::preset(backbone).map_err(err)?);
    let m = Manifest::load(&manifest).map_err(err)?;
    let o = py.detach(|| trainer::train(&model, &cfg, &m, Some(&out))).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "epoch_losses": o.epoch_losses,
            "final_lr": o.final_lr,
            "checkpoint": o.checkpoint,
        }),
    )
}

/// Scores a trial list with a checkpoint and returns the metrics dict.
#[pyfunction]
fn evaluate(py: Python<'_>, ckpt: PathBuf, manifest: PathBuf, trials: PathBuf) -> PyResult<Py<PyAny>> {
    let m = Manifest::load(&manifest).map_err(err)?;
    let t = TrialList::load(&trials).map_err(err)?;
    let r: MetricsReport = py.detach(|| evalkit::evaluate(&ckpt, &m, &t, None)).map_err(err)?;
    to_py(py, &serde_json::to_value(r).map_err(|e| PyValueError::new_err(e.to_string()))?)
}

/// A loaded speaker-verification system (backbone, PETL modules, back-end).
#[pyclass(name = "SpeakerSystem")]
struct PySpeakerSystem {
    inner: SpeakerSystem,
}

#[pymethods]
impl PySpeakerSystem {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = SpeakerSystem::load(&path).map_err(err)?;
        Ok(PySpeakerSystem { inner })
    }

    /// Fresh system with random weights.
    #[staticmethod]
    #[pyo3(signature = (backbone = "desk", petl = "mam", dim = 16, l = 4, seed = 0))]
    fn new(backbone: &str, petl: &str, dim: usize, l: usize, seed: u64) -> PyResult<Self> {
        let model = ModelConfig::for_backbone(BackboneConfig::preset(backbone).map_err(err)?);
        let cfg = petl_config(petl, dim, l)?;
        let inner = SpeakerSystem::new(&model, &cfg, vec!["spk0".into()], seed).map_err(err)?;
        Ok(PySpeakerSystem { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let meta = self.inner.meta(None, serde_json::Value::Null);
        self.inner.save(&path, &meta).map_err(err)
    }

    /// Speaker embedding of a mono 16 kHz waveform.
    fn embed(&self, py: Python<'_>, waveform: Vec<f32>) -> PyResult<Vec<f32>> {
        py.detach(|| self.inner.embed(&waveform)).map_err(err)
    }

    /// Cosine similarity of the two embeddings.
    fn score(&self, py: Python<'_>, a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
        let (ea, eb) = py.detach(|| Ok::<_, petl_sv::Error>((self.inner.embed(&a)?, self.inner.embed(&b)?))).map_err(err)?;
        let dot = |u: &[f32], v: &[f32]| u.iter().zip(v).map(|(x, y)| *x as f64 * *y as f64).sum::<f64>();
        Ok(dot(&ea, &eb) / (dot(&ea, &ea).sqrt() * dot(&eb, &eb).sqrt()).max(1e-12))
    }

    /// `(trainable, total)` parameter counts.
    fn param_counts(&self) -> (usize, usize) {
        self.inner.groups().fold((0, 0), |(t, n), g| {
            let c = g.tensor.numel();
            (t + if g.trainable { c } else { 0 }, n + c)
        })
    }

    fn group_names(&self) -> Vec<String> {
        self.inner.groups().map(|g| g.name.clone()).collect()
    }
}

#[pymodule]
fn petl_sv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(compute_eer, m)?)?;
    m.add_function(wrap_pyfunction!(compute_min_dcf, m)?)?;
    m.add_function(wrap_pyfunction!(synth_desk_corpora, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PySpeakerSystem>()?;
    Ok(())
}
