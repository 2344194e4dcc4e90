use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parallel scores and target flags.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub is_target: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, is_target: Vec<bool>) -> Result<Self> {
        if scores.len() != is_target.len() {
            return Err(Error::Dimension {
                op: "ScoreSet",
                lhs: vec![scores.len()],
                rhs: vec![is_target.len()],
            });
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite score {bad}")));
        }
        Ok(ScoreSet { scores, is_target })
    }

    pub fn n_target(&self) -> usize {
        self.is_target.iter().filter(|&&t| t).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.is_target.len() - self.n_target()
    }

    fn check_classes(&self) -> Result<(usize, usize)> {
        let (nt, nn) = (self.n_target(), self.n_nontarget());
        if nt == 0 || nn == 0 {
            return Err(Error::Input(format!(
                "need both target and nontarget trials (got {nt} and {nn})"
            )));
        }
        Ok((nt, nn))
    }

    /// `(score, is_target)` sorted ascending by score.
    fn sorted(&self) -> Vec<(f64, bool)> {
        let mut v: Vec<(f64, bool)> = self.scores.iter().copied().zip(self.is_target.iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    /// Miss and false-alarm rates at every distinct score used as threshold
    /// (accept when `score >= t`), followed by `t = +inf`.
    pub fn operating_points(&self) -> Result<Vec<(f64, f64)>> {
        let (nt, nn) = self.check_classes()?;
        let sorted = self.sorted();
        let mut pts = Vec::new();
        let (mut tar_below, mut non_below) = (0usize, 0usize);
        let mut i = 0;
        while i < sorted.len() {
            pts.push((tar_below as f64 / nt as f64, (nn - non_below) as f64 / nn as f64));
            let s = sorted[i].0;
            while i < sorted.len() && sorted[i].0 == s {
                if sorted[i].1 {
                    tar_below += 1;
                } else {
                    non_below += 1;
                }
                i += 1;
            }
        }
        pts.push((1.0, 0.0));
        Ok(pts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcfParams {
    pub p_tar: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl DcfParams {
    pub fn new(p_tar: f64, c_miss: f64, c_fa: f64) -> Result<Self> {
        if !(p_tar > 0.0 && p_tar < 1.0) || c_miss <= 0.0 || c_fa <= 0.0 {
            return Err(Error::Config(format!(
                "invalid DCF parameters p_tar={p_tar} c_miss={c_miss} c_fa={c_fa}"
            )));
        }
        Ok(DcfParams { p_tar, c_miss, c_fa })
    }

    pub fn p01() -> Self {
        DcfParams {
            p_tar: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }

    pub fn p05() -> Self {
        DcfParams {
            p_tar: 0.05,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

/// Equal error rate with linear interpolation between the two operating
/// points around the crossing of the miss and false-alarm curves.
pub fn compute_eer(s: &ScoreSet) -> Result<f64> {
    let pts = s.operating_points()?;
    for k in 1..pts.len() {
        let (frr, far) = pts[k];
        if frr >= far {
            if frr == far {
                return Ok(frr);
            }
            let (frr0, far0) = pts[k - 1];
            let alpha = (far0 - frr0) / ((frr - frr0) - (far - far0));
            return Ok(frr0 + alpha * (frr - frr0));
        }
    }
    unreachable!("the last operating point has miss rate 1 and false-alarm rate 0")
}

/// Minimum normalized detection cost over all thresholds, including
/// accept-all and reject-all.
pub fn compute_min_dcf(s: &ScoreSet, p: &DcfParams) -> Result<f64> {
    let pts = s.operating_points()?;
    let norm = (p.c_miss * p.p_tar).min(p.c_fa * (1.0 - p.p_tar));
    let best = pts
        .iter()
        .map(|&(miss, fa)| p.c_miss * p.p_tar * miss + p.c_fa * (1.0 - p.p_tar) * fa)
        .fold(f64::INFINITY, f64::min);
    Ok(best / norm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer: f64,
    pub min_dcf_p01: f64,
    pub min_dcf_p05: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

impl MetricsReport {
    pub fn compute(s: &ScoreSet) -> Result<Self> {
        Ok(MetricsReport {
            eer: compute_eer(s)?,
            min_dcf_p01: compute_min_dcf(s, &DcfParams::p01())?,
            min_dcf_p05: compute_min_dcf(s, &DcfParams::p05())?,
            n_target: s.n_target(),
            n_nontarget: s.n_nontarget(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(t: &[f64], n: &[f64]) -> ScoreSet {
        let scores = t.iter().chain(n).copied().collect();
        let labels = t.iter().map(|_| true).chain(n.iter().map(|_| false)).collect();
        ScoreSet::new(scores, labels).unwrap()
    }

    #[test]
    fn perfect_separation() {
        let s = set(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(compute_eer(&s).unwrap(), 0.0);
        assert_eq!(compute_min_dcf(&s, &DcfParams::p01()).unwrap(), 0.0);
    }

    #[test]
    fn interleaved_four() {
        assert_eq!(compute_eer(&set(&[3.0, 1.0], &[2.0, 0.0])).unwrap(), 0.5);
    }

    #[test]
    fn fully_inverted_is_one() {
        assert_eq!(compute_eer(&set(&[0.0, 0.1], &[0.5, 0.9])).unwrap(), 1.0);
    }

    #[test]
    fn identical_scores() {
        let s = set(&[0.3; 4], &[0.3; 6]);
        assert_eq!(compute_min_dcf(&s, &DcfParams::p01()).unwrap(), 1.0);
        assert_eq!(compute_min_dcf(&s, &DcfParams::p05()).unwrap(), 1.0);
        assert_eq!(compute_eer(&s).unwrap(), 0.5);
    }

    #[test]
    fn interpolated_crossing() {
        // points: (0,1) (0,2/3) (1/2,2/3) (1/2,1/3) (1,1/3)? built by hand below
        let s = set(&[1.0, 3.0], &[0.0, 2.0, 4.0]);
        // t=1: frr 0, far 2/3; t=2: frr 1/2, far 2/3; t=3: frr 1/2, far 1/3
        // first frr>=far at t=3; segment (1/2,2/3)->(1/2,1/3) crosses at 1/2
        assert!((compute_eer(&s).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_class_is_input_error() {
        let s = ScoreSet::new(vec![0.1, 0.2], vec![true, true]).unwrap();
        assert!(matches!(compute_eer(&s), Err(Error::Input(_))));
        assert!(matches!(compute_min_dcf(&s, &DcfParams::p01()), Err(Error::Input(_))));
    }
}
