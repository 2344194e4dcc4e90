use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{synth_utterance, Domain, SpeakerProfile, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::numcore::rng::{hash_str, mix_seed};
use crate::numcore::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub name: String,
    pub corpus_seed: u64,
    pub domain: Domain,
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    /// Index of the first speaker; disjoint ranges give disjoint speaker sets.
    #[serde(default)]
    pub first_speaker: usize,
    /// Utterance durations are drawn uniformly from this range (seconds).
    pub duration_s: (f64, f64),
    /// Whether to generate a verification trial list.
    #[serde(default)]
    pub trials: bool,
}

impl CorpusSpec {
    pub fn new(name: &str, corpus_seed: u64, domain: Domain, n_speakers: usize, utts_per_speaker: usize) -> Self {
        CorpusSpec {
            name: name.to_string(),
            corpus_seed,
            domain,
            n_speakers,
            utts_per_speaker,
            first_speaker: 0,
            duration_s: (3.0, 3.0),
            trials: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::Config(format!("corpus {} needs at least 2 speakers", self.name)));
        }
        if self.utts_per_speaker < 2 {
            return Err(Error::Config(format!(
                "corpus {} needs at least 2 utterances per speaker",
                self.name
            )));
        }
        let (lo, hi) = self.duration_s;
        if lo < super::synth::MIN_DURATION_S || hi < lo {
            return Err(Error::Config(format!("invalid duration range {:?}", self.duration_s)));
        }
        Ok(())
    }
}

/// The four desk corpora: intermediate domain A (64 x 20), target domain B
/// (16 x 10), and held-out evaluation sets for B and A (16 x 10 each).
pub fn desk_corpora(corpus_seed: u64) -> Vec<CorpusSpec> {
    let eval = |name: &str, domain, first| CorpusSpec {
        first_speaker: first,
        trials: true,
        ..CorpusSpec::new(name, corpus_seed, domain, 16, 10)
    };
    vec![
        CorpusSpec::new("intermediate_a", corpus_seed, Domain::A, 64, 20),
        CorpusSpec::new("target_b", corpus_seed, Domain::B, 16, 10),
        eval("eval_b", Domain::B, 16),
        eval("eval_a", Domain::A, 64),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub utt_id: String,
    pub speaker_id: String,
    pub domain: Domain,
    /// WAV file name relative to the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Inline mode: the waveform is re-synthesized from this seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub corpus_seed: u64,
    pub duration_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory that relative `path`s resolve against.
    pub root: Option<PathBuf>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sorted distinct speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.iter().map(|r| r.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Speaker index of each row under [`Manifest::speakers`] ordering.
    pub fn labels(&self) -> Vec<usize> {
        let index: BTreeMap<String, usize> = self.speakers().into_iter().enumerate().map(|(i, s)| (s, i)).collect();
        self.rows.iter().map(|r| index[&r.speaker_id]).collect()
    }

    pub fn find(&self, utt_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.utt_id == utt_id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut per_speaker: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.rows {
            if !seen.insert(r.utt_id.as_str()) {
                return Err(Error::Input(format!("duplicate utt_id {}", r.utt_id)));
            }
            *per_speaker.entry(&r.speaker_id).or_default() += 1;
        }
        if let Some((s, _)) = per_speaker.iter().find(|(_, &n)| n < 2) {
            return Err(Error::Input(format!("speaker {s} has fewer than 2 utterances")));
        }
        Ok(())
    }

    pub fn waveform(&self, row: &ManifestRow) -> Result<Vec<f32>> {
        match (&row.path, row.seed) {
            (Some(p), _) => {
                let full = match &self.root {
                    Some(root) => root.join(p),
                    None => PathBuf::from(p),
                };
                read_wav(&full)
            }
            (None, Some(seed)) => {
                let profile = SpeakerProfile::derive(row.corpus_seed, &row.speaker_id, row.domain);
                synth_utterance(&profile, seed, row.duration_s, SAMPLE_RATE)
            }
            (None, None) => Err(Error::Input(format!("{} has neither path nor seed", row.utt_id))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.rows {
            let line = serde_json::to_string(r).map_err(|e| Error::json("manifest row", e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?,
            );
        }
        let m = Manifest {
            rows,
            root: path.parent().map(Path::to_path_buf),
        };
        m.validate()?;
        Ok(m)
    }
}

/// Builds the manifest of `spec`. With `out_dir`, WAV files, `manifest.jsonl`
/// and (if requested) `trials.txt` are written there; otherwise rows are
/// inline-seeded and nothing touches the disk.
pub fn make_corpus(spec: &CorpusSpec, out_dir: Option<&Path>) -> Result<(Manifest, Option<TrialList>)> {
    spec.validate()?;
    let tag = match spec.domain {
        Domain::A => "A",
        Domain::B => "B",
    };
    let mut rows = Vec::with_capacity(spec.n_speakers * spec.utts_per_speaker);
    for s in 0..spec.n_speakers {
        let speaker_id = format!("{tag}{:03}", spec.first_speaker + s);
        for u in 0..spec.utts_per_speaker {
            let utt_id = format!("{speaker_id}-u{u:03}");
            let seed = mix_seed(spec.corpus_seed, hash_str(&utt_id));
            let (lo, hi) = spec.duration_s;
            let dur = if hi > lo {
                let d = Rng::new(seed).uniform_range(lo, hi);
                (d * 1000.0).round() / 1000.0
            } else {
                lo
            };
            rows.push(ManifestRow {
                utt_id,
                speaker_id: speaker_id.clone(),
                domain: spec.domain,
                path: None,
                seed: Some(seed),
                corpus_seed: spec.corpus_seed,
                duration_s: dur,
            });
        }
    }
    let mut manifest = Manifest { rows, root: None };
    let trials = if spec.trials {
        Some(make_trials(&manifest, mix_seed(spec.corpus_seed, hash_str(&spec.name)))?)
    } else {
        None
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let waves: Vec<Result<()>> = manifest
            .rows
            .par_iter()
            .map(|r| {
                let wave = manifest.waveform(r)?;
                write_wav(&dir.join(format!("{}.wav", r.utt_id)), &wave)
            })
            .collect();
        waves.into_iter().collect::<Result<()>>()?;
        for r in &mut manifest.rows {
            r.path = Some(format!("{}.wav", r.utt_id));
            r.seed = None;
        }
        manifest.root = Some(dir.to_path_buf());
        manifest.save(&dir.join("manifest.jsonl"))?;
        if let Some(t) = &trials {
            t.save(&dir.join("trials.txt"))?;
        }
    }
    Ok((manifest, trials))
}

pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Input(format!("{}: {other}", path.display())),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(q).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Input(format!("{}: {other}", path.display())),
    };
    let mut r = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 {
        return Err(Error::Input(format!(
            "{}: expected 16-bit mono, got {} channels at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    r.samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32767.0).map_err(wav_err))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub target: bool,
    pub enroll: String,
    pub test: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    /// Lines `label enroll test`, label 1 for target trials.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for t in &self.trials {
            s.push_str(&format!("{} {} {}\n", u8::from(t.target), t.enroll, t.test));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut trials = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let bad = || Error::Input(format!("{}:{}: expected `label enroll test`", path.display(), i + 1));
            if f.len() != 3 {
                return Err(bad());
            }
            let target = match f[0] {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            };
            trials.push(Trial {
                target,
                enroll: f[1].to_string(),
                test: f[2].to_string(),
            });
        }
        Ok(TrialList { trials })
    }
}

/// Every same-speaker pair plus as many distinct random different-speaker pairs.
pub fn make_trials(manifest: &Manifest, seed: u64) -> Result<TrialList> {
    let rows = &manifest.rows;
    let mut trials = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if rows[i].speaker_id == rows[j].speaker_id {
                trials.push(Trial {
                    target: true,
                    enroll: rows[i].utt_id.clone(),
                    test: rows[j].utt_id.clone(),
                });
            }
        }
    }
    let n_target = trials.len();
    let n_pairs = rows.len() * rows.len().saturating_sub(1) / 2;
    if n_target == 0 || n_pairs - n_target < n_target {
        return Err(Error::Input("not enough speakers for a balanced trial list".into()));
    }
    let mut rng = Rng::new(seed);
    let mut used = HashSet::new();
    while trials.len() < 2 * n_target {
        let (a, b) = (rng.below(rows.len()), rng.below(rows.len()));
        let (i, j) = (a.min(b), a.max(b));
        if rows[i].speaker_id == rows[j].speaker_id || !used.insert((i, j)) {
            continue;
        }
        trials.push(Trial {
            target: false,
            enroll: rows[i].utt_id.clone(),
            test: rows[j].utt_id.clone(),
        });
    }
    Ok(TrialList { trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_has_four_rows() {
        let spec = CorpusSpec::new("t", 1, Domain::A, 2, 2);
        let (m, t) = make_corpus(&spec, None).unwrap();
        assert_eq!(m.len(), 4);
        assert!(t.is_none());
        m.validate().unwrap();
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let spec = CorpusSpec {
            duration_s: (0.5, 0.8),
            trials: true,
            ..CorpusSpec::new("t", 9, Domain::B, 3, 2)
        };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        make_corpus(&spec, Some(d1.path())).unwrap();
        make_corpus(&spec, Some(d2.path())).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(d1.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 6 + 2);
        for n in names {
            assert_eq!(std::fs::read(d1.path().join(&n)).unwrap(), std::fs::read(d2.path().join(&n)).unwrap());
        }
        let loaded = Manifest::load(&d1.path().join("manifest.jsonl")).unwrap();
        let wave = loaded.waveform(&loaded.rows[0]).unwrap();
        let inline = make_corpus(&spec, None).unwrap().0;
        let direct = inline.waveform(&inline.rows[0]).unwrap();
        assert_eq!(wave.len(), direct.len());
        assert!(wave.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1.0 / 32000.0));
    }

    #[test]
    fn trials_are_balanced() {
        let spec = CorpusSpec {
            trials: true,
            ..CorpusSpec::new("e", 3, Domain::B, 16, 10)
        };
        let (_, t) = make_corpus(&spec, None).unwrap();
        let t = t.unwrap();
        assert_eq!(t.n_target(), 16 * 45);
        assert!((2 * t.n_target()).abs_diff(t.len()) <= 1);
    }

    #[test]
    fn trial_file_roundtrip() {
        let spec = CorpusSpec {
            trials: true,
            ..CorpusSpec::new("e", 3, Domain::A, 3, 3)
        };
        let t = make_corpus(&spec, None).unwrap().1.unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trials.txt");
        t.save(&p).unwrap();
        assert_eq!(TrialList::load(&p).unwrap(), t);
    }

    #[test]
    fn held_out_speakers_are_disjoint() {
        let specs = desk_corpora(5);
        let b = make_corpus(&specs[1], None).unwrap().0.speakers();
        let eb = make_corpus(&specs[2], None).unwrap().0.speakers();
        assert!(b.iter().all(|s| !eb.contains(s)));
        assert_eq!(make_corpus(&specs[0], None).unwrap().0.len(), 64 * 20);
    }
}
