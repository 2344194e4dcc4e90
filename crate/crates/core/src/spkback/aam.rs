//! Additive angular margin softmax.

use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamGroup, Rng, Scalar, Tensor, Var};

pub const CLASSES: &str = "head.classes";
pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_SCALE: f64 = 30.0;

/// Classification head: one weight column per training speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct AamHead {
    pub classes: Tensor<f32>,
    pub margin: f64,
    pub scale: f64,
}

impl AamHead {
    pub fn new(d_emb: usize, n_speakers: usize, margin: f64, scale: f64, seed: u64) -> Result<Self> {
        let head = AamHead {
            classes: Rng::new(seed).normal_tensor(&[d_emb, n_speakers], 1.0),
            margin,
            scale,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return Err(Error::Config(format!("margin {} outside [0, pi/2)", self.margin)));
        }
        if self.scale <= 0.0 {
            return Err(Error::Config(format!("scale {} must be positive", self.scale)));
        }
        Ok(())
    }

    pub fn n_speakers(&self) -> usize {
        self.classes.cols()
    }

    pub fn to_group(&self, trainable: bool) -> ParamGroup {
        ParamGroup::new(CLASSES, self.classes.clone(), trainable)
    }
}

/// Mean cross-entropy over margin-adjusted scaled cosines, and its gradient
/// with respect to the `B x n` cosine matrix.
pub(crate) fn aam_from_cosines<T: Scalar>(
    cos: &Tensor<T>,
    labels: &[usize],
    margin: f64,
    scale: f64,
) -> Result<(T, Tensor<T>)> {
    let (b, n) = cos.dims2();
    if labels.len() != b {
        return Err(Error::Input(format!("{} labels for {b} embeddings", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
        return Err(Error::Input(format!("label {bad} out of range for {n} speakers")));
    }
    let s = T::from_f64(scale);
    let cos_m = T::from_f64(margin.cos());
    let sin_m = T::from_f64(margin.sin());
    let threshold = T::from_f64((std::f64::consts::PI - margin).cos());
    let mm = T::from_f64(margin * margin.sin());
    let inv_b = T::from_f64(1.0 / b as f64);
    let one = T::one();
    let tiny = T::from_f64(1e-12);

    let mut total = T::zero();
    let mut grad = vec![T::zero(); b * n];
    let mut logits = vec![T::zero(); n];
    for (r, &y) in labels.iter().enumerate() {
        let row = cos.row(r);
        for (l, &c) in logits.iter_mut().zip(row) {
            *l = s * c;
        }
        let c = row[y];
        let (target, dtarget) = if c > threshold {
            let sin_t = (one - c * c).max(tiny).sqrt();
            (c * cos_m - sin_t * sin_m, cos_m + sin_m * c / sin_t)
        } else {
            (c - mm, one)
        };
        logits[y] = s * target;
        let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
        let z: T = logits.iter().map(|&l| (l - max).exp()).sum();
        total = total + (max + z.ln() - logits[y]);
        let g = &mut grad[r * n..(r + 1) * n];
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (logits[j] - max).exp() / z;
            let dl = if j == y { p - one } else { p };
            let dc = if j == y { dl * s * dtarget } else { dl * s };
            *gj = dc * inv_b;
        }
    }
    Ok((total * inv_b, Tensor::matrix(b, n, grad)?))
}

/// Records the AAM loss for `B x d_emb` embeddings against `d_emb x n` class weights.
pub fn aam_graph<T: Scalar>(
    g: &mut Graph<T>,
    embeddings: Var,
    classes: Var,
    labels: &[usize],
    margin: f64,
    scale: f64,
) -> Result<Var> {
    let e = g.l2_normalize_rows(embeddings)?;
    let ct = g.transpose(classes);
    let c = g.l2_normalize_rows(ct)?;
    let cos = g.matmul_nt(e, c)?;
    let (loss, dcos) = aam_from_cosines(g.value(cos), labels, margin, scale)?;
    Ok(g.precomputed(cos, loss, dcos))
}

/// Plain evaluation of the loss in 64-bit.
pub fn aam_loss(embeddings: &Tensor<f32>, labels: &[usize], head: &AamHead) -> Result<f64> {
    head.validate()?;
    let mut g = Graph::<f64>::inference();
    let e = g.constant(embeddings.cast());
    let c = g.constant(head.classes.cast());
    let l = aam_graph(&mut g, e, c, labels, head.margin, head.scale)?;
    Ok(g.value(l).data()[0])
}
