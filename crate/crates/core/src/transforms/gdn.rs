//! Generalized divisive normalization and its inverse.
//!
//! `y_i = x_i / sqrt(beta_i^2 + sum_j gamma_ij x_j^2)`; IGDN multiplies instead.
//! Both `beta` and `gamma` are stored as free parameters and squared on use:
//! `beta = b^2 + BETA_MIN`, `gamma = g^2`, which keeps `beta >= BETA_MIN` and
//! `gamma >= 0` without any projection step.

use crate::autograd::{Graph, UnaryOp, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

pub const BETA_MIN: f64 = 1e-6;

/// Initial off-diagonal `gamma` reparameterisation. A free parameter of exactly
/// zero would have a zero gradient forever under the squaring map.
const GAMMA_PEDESTAL: f64 = 1.0 / 512.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GdnParams {
    pub beta_raw: ParamId,
    pub gamma_raw: ParamId,
    pub inverse: bool,
}

impl GdnParams {
    /// `beta = 1`, `gamma = 0.1 * I` (plus a negligible off-diagonal pedestal).
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, inverse: bool) -> Self {
        let beta_raw = Tensor::full(Shape::channel_vector(channels), (1.0 - BETA_MIN).sqrt());
        let gamma_raw = Tensor::from_fn(Shape::new(channels, channels, 1, 1), |[i, j, _, _]| {
            if i == j {
                0.1f64.sqrt()
            } else {
                GAMMA_PEDESTAL
            }
        });
        GdnParams {
            beta_raw: store.add(format!("{name}.beta"), beta_raw),
            gamma_raw: store.add(format!("{name}.gamma"), gamma_raw),
            inverse,
        }
    }

    /// Registers a layer with explicit effective `beta` (length C) and `gamma` (C x C, row-major).
    pub fn with_values(
        store: &mut ParamStore,
        name: &str,
        beta: &[f64],
        gamma: &[f64],
        inverse: bool,
    ) -> Result<Self> {
        let p = GdnParams::new(store, name, beta.len(), inverse);
        p.set(store, beta, gamma)?;
        Ok(p)
    }

    /// Overwrites the effective parameters.
    pub fn set(&self, store: &mut ParamStore, beta: &[f64], gamma: &[f64]) -> Result<()> {
        let c = beta.len();
        if gamma.len() != c * c || store.get(self.beta_raw).numel() != c {
            return Err(Error::config("GDN parameter sizes do not match the layer"));
        }
        if beta.iter().any(|&b| b < BETA_MIN) || gamma.iter().any(|&v| v < 0.0) {
            return Err(Error::config(format!(
                "GDN needs beta >= {BETA_MIN} and gamma >= 0"
            )));
        }
        for (r, &b) in store.get_mut(self.beta_raw).data_mut().iter_mut().zip(beta) {
            *r = (b - BETA_MIN).sqrt();
        }
        for (r, &v) in store.get_mut(self.gamma_raw).data_mut().iter_mut().zip(gamma) {
            *r = v.sqrt();
        }
        Ok(())
    }

    pub fn beta(&self, store: &ParamStore) -> Vec<f64> {
        store
            .get(self.beta_raw)
            .data()
            .iter()
            .map(|r| r * r + BETA_MIN)
            .collect()
    }

    pub fn gamma(&self, store: &ParamStore) -> Tensor {
        store.get(self.gamma_raw).map(|r| r * r)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.beta_raw, self.gamma_raw]
    }
}

/// `sqrt(beta^2 + gamma x^2)` per pixel.
fn denominator(g: &mut Graph, params: &Bindings, x: Var, p: &GdnParams) -> Result<Var> {
    let beta_raw = params.var(p.beta_raw);
    let beta_sq_raw = g.square(beta_raw)?;
    let beta = g.offset(beta_sq_raw, BETA_MIN)?;
    let beta_sq = g.square(beta)?;
    let gamma_raw = params.var(p.gamma_raw);
    let gamma = g.square(gamma_raw)?;
    let x_sq = g.square(x)?;
    let norm = g.dense_channelwise(x_sq, gamma, Some(beta_sq))?;
    let floor = BETA_MIN * BETA_MIN * (1.0 - 1e-9);
    if let Some(v) = g.value(norm).data().iter().find(|&&v| v < floor) {
        return Err(Error::numeric(format!("GDN denominator {v} fell below {}", BETA_MIN * BETA_MIN)));
    }
    g.sqrt(norm)
}

pub fn gdn_forward(g: &mut Graph, params: &Bindings, x: Var, p: &GdnParams) -> Result<Var> {
    let d = denominator(g, params, x, p)?;
    if p.inverse {
        g.mul(x, d)
    } else {
        g.div(x, d)
    }
}

/// The GDN amplitude `1 / sqrt(beta^2 + gamma x^2)` (or its reciprocal for IGDN).
pub fn gdn_amplitude(g: &mut Graph, params: &Bindings, x: Var, p: &GdnParams) -> Result<Var> {
    let d = denominator(g, params, x, p)?;
    if p.inverse {
        Ok(d)
    } else {
        g.unary(d, UnaryOp::Reciprocal)
    }
}
