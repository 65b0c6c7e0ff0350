//! Nonlinear transforms, all expressed as a carrier multiplied onto the input.
//!
//! Every layer computes `f(x) = x * A(x) * cos(w(x) + phi(x))` for some choice
//! of amplitude `A`, frequency `w` and phase `phi`. ReLU, GDN and shrinkage
//! vary only the amplitude; the modulation family (TAM/TPM/TFM/TJM) learns any
//! subset of the three branches, and ResTSM stacks joint units behind an
//! identity shortcut.

mod gdn;
mod simple;
mod tsm;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, Bindings, ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

pub use gdn::{gdn_amplitude, gdn_forward, GdnParams, BETA_MIN};
pub use simple::{
    relu_amplitude, relu_as_amplitude, relu_forward, shrinkage_amplitude, shrinkage_forward,
    ShrinkageParams,
};
pub use tsm::{
    branches, carrier, modulate, res_tsm_forward, tsm_forward, BranchMask, Branches,
    CarrierParams, ResTsmParams, DEFAULT_RESTSM_DEPTH,
};

/// Stable identifiers used in configs, checkpoints and bitstream headers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NonlinearityKind {
    Relu,
    Gdn,
    Sa,
    Tam,
    Tpm,
    Tfm,
    Tjm,
    ResTsm,
}

impl NonlinearityKind {
    pub const ALL: [NonlinearityKind; 8] = [
        NonlinearityKind::Relu,
        NonlinearityKind::Gdn,
        NonlinearityKind::Sa,
        NonlinearityKind::Tam,
        NonlinearityKind::Tpm,
        NonlinearityKind::Tfm,
        NonlinearityKind::Tjm,
        NonlinearityKind::ResTsm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            NonlinearityKind::Relu => "relu",
            NonlinearityKind::Gdn => "gdn",
            NonlinearityKind::Sa => "sa",
            NonlinearityKind::Tam => "tam",
            NonlinearityKind::Tpm => "tpm",
            NonlinearityKind::Tfm => "tfm",
            NonlinearityKind::Tjm => "tjm",
            NonlinearityKind::ResTsm => "restsm",
        }
    }

    /// Branch mask of the single-unit modulation kinds.
    pub fn branch_mask(&self) -> Option<BranchMask> {
        match self {
            NonlinearityKind::Tam => Some(BranchMask::TAM),
            NonlinearityKind::Tpm => Some(BranchMask::TPM),
            NonlinearityKind::Tfm => Some(BranchMask::TFM),
            NonlinearityKind::Tjm => Some(BranchMask::TJM),
            _ => None,
        }
    }

    /// Closed-form learnable-scalar count of one layer over `c` channels.
    pub fn param_count(&self, c: usize, restsm_depth: usize) -> usize {
        let affine = c * c + c;
        match self {
            NonlinearityKind::Relu => 0,
            NonlinearityKind::Gdn => affine,
            NonlinearityKind::Sa => c,
            NonlinearityKind::Tam | NonlinearityKind::Tpm | NonlinearityKind::Tfm => affine,
            NonlinearityKind::Tjm => 3 * affine,
            NonlinearityKind::ResTsm => {
                restsm_depth * 3 * affine + restsm_depth.saturating_sub(1) * affine
            }
        }
    }

    /// Forward FLOPs of one layer on a `c x h x w` feature map.
    ///
    /// A multiply-accumulate of a channel map counts as one FLOP (biases are
    /// folded into it), and every other per-element operation, transcendental
    /// or arithmetic, counts as one.
    pub fn flops(&self, c: usize, h: usize, w: usize, restsm_depth: usize) -> u64 {
        let elems = (c * h * w) as u64;
        let mix = dense_flops(c, c, h, w);
        match self {
            NonlinearityKind::Relu => elems,
            // square, sqrt, divide
            NonlinearityKind::Gdn => mix + 3 * elems,
            // divide, compare, multiply
            NonlinearityKind::Sa => 3 * elems,
            NonlinearityKind::Tam | NonlinearityKind::Tpm | NonlinearityKind::Tfm | NonlinearityKind::Tjm => {
                tsm_flops(self.branch_mask().unwrap(), c, h, w)
            }
            NonlinearityKind::ResTsm => {
                let depth = restsm_depth as u64;
                depth * tsm_flops(BranchMask::TJM, c, h, w)
                    + depth.saturating_sub(1) * mix
                    + elems
            }
        }
    }
}

fn tsm_flops(mask: BranchMask, c: usize, h: usize, w: usize) -> u64 {
    let elems = (c * h * w) as u64;
    let mix = dense_flops(c, c, h, w);
    let mut total = elems; // x * carrier
    if mask.amplitude {
        total += mix + elems; // softplus
    }
    if mask.frequency {
        total += mix;
    }
    if mask.phase {
        total += mix + 2 * elems; // tanh, scale
    }
    if mask.frequency || mask.phase {
        total += elems; // cos
    }
    if mask.frequency && mask.phase {
        total += elems;
    }
    if mask.amplitude && (mask.frequency || mask.phase) {
        total += elems;
    }
    total
}

/// MACs of a per-pixel `c_in -> c_out` channel map.
pub fn dense_flops(c_in: usize, c_out: usize, h: usize, w: usize) -> u64 {
    (c_in * c_out * h * w) as u64
}

impl fmt::Display for NonlinearityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NonlinearityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NonlinearityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown nonlinearity {s:?}; expected one of relu, gdn, sa, tam, tpm, tfm, tjm, restsm"
                ))
            })
    }
}

/// Per-pixel affine channel map with square weight, the building block of
/// every learned branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    /// Registers a `channels x channels` map with the given initial values.
    pub fn new(store: &mut ParamStore, name: &str, weight: Tensor, bias: Tensor) -> Self {
        Affine {
            weight: store.add(format!("{name}.weight"), weight),
            bias: store.add(format!("{name}.bias"), bias),
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Affine::new(
            store,
            name,
            Tensor::zeros(Shape::new(channels, channels, 1, 1)),
            Tensor::zeros(Shape::channel_vector(channels)),
        )
    }

    /// Glorot-uniform weights scaled by `gain`, constant bias.
    pub fn random(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        gain: f64,
        bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = glorot_uniform(Shape::new(channels, channels, 1, 1), channels, channels, rng);
        w.scale_assign(gain);
        Affine::new(
            store,
            name,
            w,
            Tensor::full(Shape::channel_vector(channels), bias),
        )
    }

    pub fn apply(&self, g: &mut Graph, params: &Bindings, x: Var) -> Result<Var> {
        g.dense_channelwise(x, params.var(self.weight), Some(params.var(self.bias)))
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// A nonlinear transform layer over a fixed channel count.
#[derive(Clone, Debug, PartialEq)]
pub enum Nonlinearity {
    Relu,
    Gdn(GdnParams),
    Shrinkage(ShrinkageParams),
    Tsm(CarrierParams),
    ResTsm(ResTsmParams),
}

impl Nonlinearity {
    /// Registers a freshly initialised layer under `name`.
    ///
    /// `inverse` selects IGDN for the GDN kind; the other kinds use the same
    /// functional form on both sides of the codec.
    pub fn new(
        kind: NonlinearityKind,
        channels: usize,
        inverse: bool,
        restsm_depth: usize,
        name: &str,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(match kind {
            NonlinearityKind::Relu => Nonlinearity::Relu,
            NonlinearityKind::Gdn => Nonlinearity::Gdn(GdnParams::new(store, name, channels, inverse)),
            NonlinearityKind::Sa => {
                Nonlinearity::Shrinkage(ShrinkageParams::new(store, name, &vec![0.5; channels])?)
            }
            NonlinearityKind::ResTsm => {
                Nonlinearity::ResTsm(ResTsmParams::near_identity(store, name, channels, restsm_depth, rng)?)
            }
            k => Nonlinearity::Tsm(CarrierParams::near_identity(
                store,
                name,
                channels,
                k.branch_mask().expect("modulation kind"),
                rng,
            )),
        })
    }

    pub fn kind(&self) -> NonlinearityKind {
        match self {
            Nonlinearity::Relu => NonlinearityKind::Relu,
            Nonlinearity::Gdn(_) => NonlinearityKind::Gdn,
            Nonlinearity::Shrinkage(_) => NonlinearityKind::Sa,
            Nonlinearity::Tsm(p) => p.mask.kind(),
            Nonlinearity::ResTsm(_) => NonlinearityKind::ResTsm,
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &Bindings, x: Var) -> Result<Var> {
        match self {
            Nonlinearity::Relu => relu_forward(g, x),
            Nonlinearity::Gdn(p) => gdn_forward(g, params, x, p),
            Nonlinearity::Shrinkage(p) => shrinkage_forward(g, params, x, p),
            Nonlinearity::Tsm(p) => tsm_forward(g, params, x, p),
            Nonlinearity::ResTsm(p) => res_tsm_forward(g, params, x, p),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Nonlinearity::Relu => Vec::new(),
            Nonlinearity::Gdn(p) => p.ids().to_vec(),
            Nonlinearity::Shrinkage(p) => vec![p.log_theta],
            Nonlinearity::Tsm(p) => p.param_ids(),
            Nonlinearity::ResTsm(p) => p.param_ids(),
        }
    }

    /// Exact learnable-scalar count of this layer.
    pub fn count_params(&self, store: &ParamStore) -> usize {
        store.count(&self.param_ids())
    }
}
