use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::datagen::{Manifest, TrialList};
use crate::error::{Error, Result};
use crate::spkback::cosine_score;
use crate::trainer::SpeakerSystem;

use super::metrics::ScoreSet;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTrial {
    pub enroll: String,
    pub test: String,
    pub target: bool,
    pub score: f64,
}

/// Embeds every distinct utterance of `trials` once over its full length,
/// then scores each trial by cosine similarity. Output order follows `trials`.
pub fn score_trials(system: &SpeakerSystem, manifest: &Manifest, trials: &TrialList) -> Result<(ScoreSet, Vec<ScoredTrial>)> {
    if trials.is_empty() {
        return Err(Error::Input("empty trial list".into()));
    }
    let mut unique = BTreeMap::new();
    for t in &trials.trials {
        for utt in [&t.enroll, &t.test] {
            if !unique.contains_key(utt.as_str()) {
                let row = manifest
                    .find(utt)
                    .ok_or_else(|| Error::Input(format!("utterance {utt} is not in the manifest")))?;
                unique.insert(utt.as_str(), row);
            }
        }
    }
    let rows: Vec<_> = unique.into_iter().collect();
    let embedded: Vec<(&str, Vec<f32>)> = rows
        .par_iter()
        .map(|(utt, row)| {
            let wave = manifest.waveform(row)?;
            Ok((*utt, system.embed(&wave)?))
        })
        .collect::<Result<_>>()?;
    let table: BTreeMap<&str, Vec<f32>> = embedded.into_iter().collect();
    let scored: Vec<ScoredTrial> = trials
        .trials
        .iter()
        .map(|t| {
            Ok(ScoredTrial {
                enroll: t.enroll.clone(),
                test: t.test.clone(),
                target: t.target,
                score: cosine_score(&table[t.enroll.as_str()], &table[t.test.as_str()])?,
            })
        })
        .collect::<Result<_>>()?;
    let set = ScoreSet::new(
        scored.iter().map(|s| s.score).collect(),
        scored.iter().map(|s| s.target).collect(),
    )?;
    Ok((set, scored))
}

/// Lines `enroll test score`.
pub fn write_scores(path: &Path, scored: &[ScoredTrial]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in scored {
        writeln!(w, "{} {} {:.8}", s.enroll, s.test, s.score).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_corpus, make_trials, CorpusSpec, Domain, Trial};
    use crate::petl::PetlConfig;
    use crate::trainer::ModelConfig;

    fn setup() -> (SpeakerSystem, Manifest) {
        let mut spec = CorpusSpec::new("t", 5, Domain::B, 3, 2);
        spec.duration_s = (1.0, 1.0);
        let (m, _) = make_corpus(&spec, None).unwrap();
        let sys = SpeakerSystem::new(&ModelConfig::desk(), &PetlConfig::full(), m.speakers(), 3).unwrap();
        (sys, m)
    }

    #[test]
    fn self_trial_order_and_missing() {
        let (sys, m) = setup();
        let u = m.rows[0].utt_id.clone();
        let mut trials = make_trials(&m, 1).unwrap();
        trials.trials.push(Trial {
            target: true,
            enroll: u.clone(),
            test: u.clone(),
        });
        let (set, scored) = score_trials(&sys, &m, &trials).unwrap();
        assert_eq!(scored.len(), trials.len());
        assert!((set.scores.last().unwrap() - 1.0).abs() < 1e-9);

        let mut rev = trials.clone();
        rev.trials.reverse();
        let (rset, _) = score_trials(&sys, &m, &rev).unwrap();
        let mut back = rset.scores.clone();
        back.reverse();
        assert_eq!(back, set.scores);

        rev.trials.push(Trial {
            target: false,
            enroll: u,
            test: "nobody-u000".into(),
        });
        match score_trials(&sys, &m, &rev) {
            Err(Error::Input(msg)) => assert!(msg.contains("nobody-u000")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn score_file_rows() {
        let (sys, m) = setup();
        let trials = make_trials(&m, 1).unwrap();
        let (_, scored) = score_trials(&sys, &m, &trials).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.txt");
        write_scores(&p, &scored).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), trials.len());
    }
}
