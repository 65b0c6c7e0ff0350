//! Amplitude-only baselines: ReLU and shrinkage activation.

use crate::autograd::{Graph, UnaryOp, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

use super::tsm::{modulate, Branches};

pub fn relu_forward(g: &mut Graph, x: Var) -> Result<Var> {
    g.unary(x, UnaryOp::Relu)
}

/// ReLU's amplitude: 1 where `x > 0`, else 0. Piecewise constant, so it
/// enters the graph as a constant.
pub fn relu_amplitude(g: &mut Graph, x: Var) -> Result<Var> {
    let a = g.value(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    g.constant(a)
}

/// ReLU written as an amplitude-only modulation.
pub fn relu_as_amplitude(g: &mut Graph, x: Var) -> Result<Var> {
    let a = relu_amplitude(g, x)?;
    modulate(g, x, &Branches::amplitude(a))
}

/// Learnable per-channel thresholds, stored as `log(theta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShrinkageParams {
    pub log_theta: ParamId,
}

impl ShrinkageParams {
    pub fn new(store: &mut ParamStore, name: &str, theta: &[f64]) -> Result<Self> {
        if theta.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::config("shrinkage thresholds must be positive"));
        }
        let logs: Vec<f64> = theta.iter().map(|t| t.ln()).collect();
        Ok(ShrinkageParams {
            log_theta: store.add(format!("{name}.log_theta"), Tensor::channel_vector(&logs)),
        })
    }

    pub fn theta(&self, store: &ParamStore) -> Vec<f64> {
        store.get(self.log_theta).data().iter().map(|l| l.exp()).collect()
    }
}

/// 0 where `|x / theta| <= 0.5`, else 1.
pub fn shrinkage_amplitude(g: &mut Graph, params: &Bindings, x: Var, p: &ShrinkageParams) -> Result<Var> {
    let xs = g.shape(x);
    let log_theta = g.value(params.var(p.log_theta));
    if log_theta.numel() != xs.channels() {
        return Err(Error::config(format!(
            "shrinkage has {} thresholds for input {xs}",
            log_theta.numel()
        )));
    }
    let theta: Vec<f64> = log_theta.data().iter().map(|l| l.exp()).collect();
    let xv = g.value(x);
    let a = Tensor::from_fn(Shape(xs.0), |[b, c, y, w]| {
        if (xv.at([b, c, y, w]) / theta[c]).abs() > 0.5 {
            1.0
        } else {
            0.0
        }
    });
    g.constant(a)
}

/// `y = x * 1[|x / theta| > 0.5]`.
pub fn shrinkage_forward(g: &mut Graph, params: &Bindings, x: Var, p: &ShrinkageParams) -> Result<Var> {
    let a = shrinkage_amplitude(g, params, x, p)?;
    g.mul(x, a)
}
