//! Bottleneck adapter: `H_out = H_in + f(H_in W_down + b_down) W_up + b_up`.

use crate::error::{Error, Result};
use crate::numcore::ops::linear;
use crate::numcore::{Activation, Graph, Init, ParamGroup, ParamSpec, ParamStore, Scalar, Tensor, Var};

/// Init scale of `W_down`; `W_up` and both biases start at zero.
pub const DOWN_INIT_STD: f64 = 0.02;

pub fn adapter_name(block: usize, kind: &str) -> String {
    format!("petl.block{block}.{kind}")
}

pub fn layout(prefix: &str, d_hidden: usize, d_bottleneck: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.W_down"), &[d_hidden, d_bottleneck], Init::Normal(DOWN_INIT_STD)),
        ParamSpec::new(format!("{prefix}.b_down"), &[d_bottleneck], Init::Zeros),
        ParamSpec::new(format!("{prefix}.W_up"), &[d_bottleneck, d_hidden], Init::Zeros),
        ParamSpec::new(format!("{prefix}.b_up"), &[d_hidden], Init::Zeros),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckAdapterParams {
    pub w_down: Tensor<f32>,
    pub b_down: Tensor<f32>,
    pub w_up: Tensor<f32>,
    pub b_up: Tensor<f32>,
    pub activation: Activation,
}

impl BottleneckAdapterParams {
    /// Fresh adapter: `W_down ~ N(0, 0.02^2)`, everything else zero.
    pub fn init(d_hidden: usize, d_bottleneck: usize, seed: u64) -> Result<Self> {
        if d_bottleneck == 0 {
            return Err(Error::Config("d_bottleneck must be at least 1".into()));
        }
        let mut groups = layout("adapter", d_hidden, d_bottleneck)
            .into_iter()
            .map(|s| s.materialize(seed, true).tensor);
        Ok(BottleneckAdapterParams {
            w_down: groups.next().unwrap(),
            b_down: groups.next().unwrap(),
            w_up: groups.next().unwrap(),
            b_up: groups.next().unwrap(),
            activation: Activation::Gelu,
        })
    }

    pub fn d_hidden(&self) -> usize {
        self.w_down.rows()
    }

    pub fn d_bottleneck(&self) -> usize {
        self.w_down.cols()
    }

    pub fn to_groups(&self, prefix: &str, trainable: bool) -> Vec<ParamGroup> {
        [
            ("W_down", &self.w_down),
            ("b_down", &self.b_down),
            ("W_up", &self.w_up),
            ("b_up", &self.b_up),
        ]
        .into_iter()
        .map(|(n, t)| ParamGroup::new(format!("{prefix}.{n}"), t.clone(), trainable))
        .collect()
    }

    fn check(&self) -> Result<()> {
        let (d, b) = (self.d_hidden(), self.d_bottleneck());
        if self.w_up.shape() != [b, d] || self.b_down.numel() != b || self.b_up.numel() != d {
            return Err(Error::Wiring(format!(
                "inconsistent adapter shapes: W_down {:?}, W_up {:?}",
                self.w_down.shape(),
                self.w_up.shape()
            )));
        }
        Ok(())
    }

    /// The residual branch alone, `f(x W_down + b_down) W_up + b_up`.
    pub fn branch(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check()?;
        if x.cols() != self.d_hidden() {
            return Err(Error::Wiring(format!(
                "adapter expects width {}, input has shape {:?}",
                self.d_hidden(),
                x.shape()
            )));
        }
        let h = linear(x, &self.w_down, Some(&self.b_down))?;
        let h = h.map(|v| self.activation.apply(v));
        linear(&h, &self.w_up, Some(&self.b_up))
    }
}

/// Serial adapter with its own residual connection.
pub fn bottleneck_forward(h_in: &Tensor<f32>, p: &BottleneckAdapterParams) -> Result<Tensor<f32>> {
    let branch = p.branch(h_in)?;
    let (r, c) = h_in.dims2();
    let data = h_in.data().iter().zip(branch.data()).map(|(&a, &b)| a + b).collect();
    Tensor::matrix(r, c, data)
}

/// Records the adapter branch (no residual) for the groups under `prefix`.
pub fn branch_graph<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamStore,
    prefix: &str,
    x: Var,
    act: Activation,
) -> Result<Var> {
    let get = |n: &str| params.get(&format!("{prefix}.{n}"));
    let wd = g.bind(get("W_down")?);
    let bd = g.bind(get("b_down")?);
    let wu = g.bind(get("W_up")?);
    let bu = g.bind(get("b_up")?);
    if g.value(wd).rows() != g.value(x).cols() {
        return Err(Error::Wiring(format!(
            "{prefix} expects width {}, input has width {}",
            g.value(wd).rows(),
            g.value(x).cols()
        )));
    }
    let h = g.linear(x, wd, Some(bd))?;
    let h = g.activation(h, act);
    g.linear(h, wu, Some(bu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn zero_up_projection_is_identity() {
        let mut rng = Rng::new(5);
        let h = rng.normal_tensor::<f32>(&[7, 16], 1.0);
        let p = BottleneckAdapterParams::init(16, 4, 9).unwrap();
        assert_eq!(bottleneck_forward(&h, &p).unwrap(), h.reshape(vec![7, 16]).unwrap());
    }

    #[test]
    fn identity_projections_double_input() {
        let mut rng = Rng::new(6);
        let h = rng.normal_tensor::<f32>(&[3, 8], 1.0);
        let p = BottleneckAdapterParams {
            w_down: Tensor::eye(8),
            b_down: Tensor::zeros(&[8]),
            w_up: Tensor::eye(8),
            b_up: Tensor::zeros(&[8]),
            activation: Activation::Identity,
        };
        let out = bottleneck_forward(&h, &p).unwrap();
        for (o, i) in out.data().iter().zip(h.data()) {
            assert_eq!(*o, 2.0 * i);
        }
    }

    #[test]
    fn width_mismatch_is_wiring_error() {
        let p = BottleneckAdapterParams::init(16, 4, 1).unwrap();
        let h = Tensor::<f32>::zeros(&[2, 8]);
        assert!(matches!(bottleneck_forward(&h, &p), Err(Error::Wiring(_))));
    }

    #[test]
    fn matches_direct_formula_in_f64() {
        let mut rng = Rng::new(7);
        let (t, d, b) = (5, 12, 3);
        let mut p = BottleneckAdapterParams::init(d, b, 3).unwrap();
        p.w_up = rng.normal_tensor(&[b, d], 0.5);
        p.b_up = rng.normal_tensor(&[d], 0.5);
        p.b_down = rng.normal_tensor(&[b], 0.5);
        p.w_down = rng.normal_tensor(&[d, b], 0.5);
        let h = rng.normal_tensor::<f32>(&[t, d], 1.0);
        let out = bottleneck_forward(&h, &p).unwrap();

        let f = |x: f64| 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
        for r in 0..t {
            let mut z = vec![0.0f64; b];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut acc = p.b_down.data()[j] as f64;
                for k in 0..d {
                    acc += h.get(r, k) as f64 * p.w_down.get(k, j) as f64;
                }
                *zj = f(acc);
            }
            for c in 0..d {
                let mut acc = h.get(r, c) as f64 + p.b_up.data()[c] as f64;
                for (j, zj) in z.iter().enumerate() {
                    acc += zj * p.w_up.get(j, c) as f64;
                }
                assert!((out.get(r, c) as f64 - acc).abs() < 1e-5, "{r},{c}");
            }
        }
    }
}
