//! Per-channel logistic prior over latent values.

use std::f64::consts::LN_2;

use crate::autograd::{Graph, UnaryOp, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

pub const SCALE_MIN: f64 = 1e-4;
/// 2^-20: no bin is ever charged more than 20 bits.
pub const LIKELIHOOD_FLOOR: f64 = 1.0 / 1_048_576.0;

/// Location `mu_c` and `log s_c` for every latent channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedPrior {
    pub loc: ParamId,
    pub log_scale: ParamId,
}

impl FactorizedPrior {
    /// Zero location, unit scale.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        FactorizedPrior {
            loc: store.add(format!("{name}.loc"), Tensor::zeros(Shape::channel_vector(channels))),
            log_scale: store.add(
                format!("{name}.log_scale"),
                Tensor::zeros(Shape::channel_vector(channels)),
            ),
        }
    }

    pub fn channels(&self, store: &ParamStore) -> usize {
        store.get(self.loc).numel()
    }

    pub fn locs(&self, store: &ParamStore) -> Vec<f64> {
        store.get(self.loc).data().to_vec()
    }

    /// Effective scales, floored at [`SCALE_MIN`].
    pub fn scales(&self, store: &ParamStore) -> Vec<f64> {
        store
            .get(self.log_scale)
            .data()
            .iter()
            .map(|l| l.exp().max(SCALE_MIN))
            .collect()
    }

    pub fn set(&self, store: &mut ParamStore, locs: &[f64], scales: &[f64]) -> Result<()> {
        if locs.len() != self.channels(store) || scales.len() != locs.len() {
            return Err(Error::config("prior parameter count mismatch"));
        }
        if scales.iter().any(|&s| !(s >= SCALE_MIN)) {
            return Err(Error::config(format!("prior scales must be >= {SCALE_MIN}")));
        }
        store.get_mut(self.loc).data_mut().copy_from_slice(locs);
        for (l, s) in store.get_mut(self.log_scale).data_mut().iter_mut().zip(scales) {
            *l = s.ln();
        }
        Ok(())
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.loc, self.log_scale]
    }
}

pub fn logistic_cdf(x: f64, loc: f64, scale: f64) -> f64 {
    crate::autograd::UnaryOp::Sigmoid.apply((x - loc) / scale)
}

/// Mass of the unit bin centred on `v`, without flooring.
///
/// Evaluated on the side of the mean where both CDF values are small, which
/// avoids cancellation in the far tail.
pub fn bin_probability(v: f64, loc: f64, scale: f64) -> f64 {
    let sign = if v > loc { -1.0 } else { 1.0 };
    let upper = UnaryOp::Sigmoid.apply(sign * (v + 0.5 - loc) / scale);
    let lower = UnaryOp::Sigmoid.apply(sign * (v - 0.5 - loc) / scale);
    sign * (upper - lower)
}

/// `F(v + 1/2) - F(v - 1/2)` per element, floored at [`LIKELIHOOD_FLOOR`];
/// differentiable in both `y` and the prior parameters.
pub fn likelihood(g: &mut Graph, params: &Bindings, y: Var, prior: &FactorizedPrior) -> Result<Var> {
    let ys = g.shape(y);
    let loc = params.var(prior.loc);
    if g.shape(loc).numel() != ys.channels() {
        return Err(Error::config(format!(
            "prior has {} channels, latent is {ys}",
            g.shape(loc).numel()
        )));
    }
    let log_scale = params.var(prior.log_scale);
    let raw_scale = g.unary(log_scale, UnaryOp::Exp)?;
    let scale = g.lower_bound(raw_scale, SCALE_MIN)?;
    let centred = g.sub(y, loc)?;
    let sign = {
        let c = g.value(centred);
        g.constant(c.map(|v| if v > 0.0 { -1.0 } else { 1.0 }))?
    };
    let hi = g.offset(centred, 0.5)?;
    let lo = g.offset(centred, -0.5)?;
    let hi = g.div(hi, scale)?;
    let lo = g.div(lo, scale)?;
    let hi = g.mul(hi, sign)?;
    let lo = g.mul(lo, sign)?;
    let hi = g.unary(hi, UnaryOp::Sigmoid)?;
    let lo = g.unary(lo, UnaryOp::Sigmoid)?;
    let diff = g.sub(hi, lo)?;
    let p = g.mul(diff, sign)?;
    g.lower_bound(p, LIKELIHOOD_FLOOR)
}

/// Total information content `sum(-log2 p)` in bits.
pub fn rate_bits(g: &mut Graph, likelihoods: Var) -> Result<Var> {
    let logs = g.unary(likelihoods, UnaryOp::Log)?;
    let total = g.sum(logs)?;
    g.scale(total, -1.0 / LN_2)
}
