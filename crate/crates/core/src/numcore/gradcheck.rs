use std::collections::HashMap;

use super::graph::{Graph, Var};
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients to central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coords_checked: usize,
}

fn eval_scalar<F>(f: &F, params: &[(String, Tensor<f64>)]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let mut g = Graph::<f64>::inference();
    for (name, t) in params {
        g.set_override(name.clone(), t.clone());
    }
    let out = f(&mut g)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::Contract("grad_check function must return a scalar".into()));
    }
    Ok(v.data()[0])
}

/// Analytic gradients of `f` (in 64-bit) with respect to the named parameters.
pub fn analytic_gradients<F>(f: &F, params: &[(String, Tensor<f64>)]) -> Result<HashMap<String, Tensor<f64>>>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let mut g = Graph::<f64>::new();
    for (name, t) in params {
        g.set_override(name.clone(), t.clone());
    }
    let out = f(&mut g)?;
    let grads = g.backward(out)?;
    Ok(params
        .iter()
        .map(|(name, t)| {
            let gt = grads
                .get(name)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            (name.clone(), gt)
        })
        .collect())
}

/// Compares supplied analytic gradients with central finite differences on up
/// to `samples` coordinates per parameter. The error measure per coordinate is
/// `|analytic - fd| / max(1, |analytic|)`.
pub fn check_against<F>(
    f: &F,
    params: &[(String, Tensor<f64>)],
    analytic: &HashMap<String, Tensor<f64>>,
    eps: f64,
    samples: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        coords_checked: 0,
    };
    let mut work: Vec<(String, Tensor<f64>)> = params.to_vec();
    for p in 0..work.len() {
        let name = work[p].0.clone();
        let n = work[p].1.numel();
        let grad = analytic
            .get(&name)
            .ok_or_else(|| Error::Contract(format!("no analytic gradient for {name}")))?;
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| rng.below(n)).collect()
        };
        for i in coords {
            let orig = work[p].1.data()[i];
            work[p].1.data_mut()[i] = orig + eps;
            let plus = eval_scalar(f, &work)?;
            work[p].1.data_mut()[i] = orig - eps;
            let minus = eval_scalar(f, &work)?;
            work[p].1.data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let err = (a - fd).abs() / a.abs().max(1.0);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst_param = Some(name.clone());
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// Maximum relative error between the recorded gradient of `f` and central
/// finite differences with step `eps`.
pub fn grad_check<F>(
    f: F,
    params: &[(String, Tensor<f64>)],
    eps: f64,
    samples: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, params)?;
    check_against(&f, params, &analytic, eps, samples, rng)
}
