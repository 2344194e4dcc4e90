//! Brute-force oracles shared by the integration suites.
#![allow(dead_code)]

pub mod grads;

/// Miss and false-alarm rate when accepting `score >= t`, by direct counting.
pub fn rates_at(scores: &[f64], labels: &[bool], t: f64) -> (f64, f64) {
    let nt = labels.iter().filter(|&&l| l).count() as f64;
    let nn = labels.len() as f64 - nt;
    let mut miss = 0.0;
    let mut fa = 0.0;
    for (&s, &l) in scores.iter().zip(labels) {
        if l && s < t {
            miss += 1.0;
        }
        if !l && s >= t {
            fa += 1.0;
        }
    }
    (miss / nt, fa / nn)
}

fn thresholds(scores: &[f64], with_neg_inf: bool) -> Vec<f64> {
    let mut ts: Vec<f64> = Vec::new();
    for &s in scores {
        if !ts.contains(&s) {
            ts.push(s);
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if with_neg_inf {
        ts.insert(0, f64::NEG_INFINITY);
    }
    ts.push(f64::INFINITY);
    ts
}

/// EER from an O(n^2) sweep: the first segment of the miss/false-alarm
/// polyline where miss >= false alarm, linearly interpolated.
pub fn brute_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let pts: Vec<(f64, f64)> = thresholds(scores, false)
        .into_iter()
        .map(|t| rates_at(scores, labels, t))
        .collect();
    for w in pts.windows(2) {
        let (m0, f0) = w[0];
        let (m1, f1) = w[1];
        if m1 >= f1 {
            if m1 == f1 {
                return m1;
            }
            let a = (f0 - m0) / ((m1 - m0) - (f1 - f0));
            return m0 + a * (m1 - m0);
        }
    }
    panic!("no crossing")
}

/// Normalized minimum detection cost from an O(n^2) sweep.
pub fn brute_min_dcf(scores: &[f64], labels: &[bool], p: f64, c_miss: f64, c_fa: f64) -> f64 {
    let norm = (c_miss * p).min(c_fa * (1.0 - p));
    thresholds(scores, true)
        .into_iter()
        .map(|t| {
            let (m, f) = rates_at(scores, labels, t);
            c_miss * p * m + c_fa * (1.0 - p) * f
        })
        .fold(f64::INFINITY, f64::min)
        / norm
}
