//! Independent oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modcodec::autograd::{Graph, Var};
use modcodec::codec::{CodecModel, NetworkConfig};
use modcodec::entropy::add_uniform_noise;
use modcodec::params::{Bindings, ParamStore};
use modcodec::training::{rd_loss, RdLossConfig};
use modcodec::transforms::{Nonlinearity, NonlinearityKind};
use modcodec::{Shape, Tensor};

/// Step of the fourth-order central stencil. Inputs keep kinks at least 1e-3 away.
pub const FD_STEP: f64 = 1e-4;

pub const ALL_TRANSFORMS: [(&str, NonlinearityKind, bool); 9] = [
    ("relu", NonlinearityKind::Relu, false),
    ("gdn", NonlinearityKind::Gdn, false),
    ("igdn", NonlinearityKind::Gdn, true),
    ("sa", NonlinearityKind::Sa, false),
    ("tam", NonlinearityKind::Tam, false),
    ("tpm", NonlinearityKind::Tpm, false),
    ("tfm", NonlinearityKind::Tfm, false),
    ("tjm", NonlinearityKind::Tjm, false),
    ("restsm", NonlinearityKind::ResTsm, false),
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform values in `(-1, 1)` kept at least `gap` away from every point in `avoid`
/// (and their negatives), so central differences never straddle a kink.
pub fn uniform_avoiding(shape: Shape, avoid: &[f64], gap: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = rng.gen_range(-1.0..1.0);
        if avoid.iter().all(|a| (v.abs() - a.abs()).abs() > gap) {
            break v;
        }
    })
}

/// `f(inputs)` and its analytic gradient with respect to every input.
pub type Objective<'a> = dyn Fn(&[Tensor], bool) -> (f64, Vec<Tensor>) + 'a;

/// Norm-wise relative error between the analytic gradient and five-point central
/// differences, over `coords[i]` of input `i` (all coordinates when `None`).
/// Returns the worst input.
pub fn fd_relative_error(inputs: &[Tensor], f: &Objective, coords: Option<&[Vec<usize>]>) -> f64 {
    let (_, analytic) = f(inputs, true);
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let all: Vec<usize> = (0..input.numel()).collect();
        let idx = coords.map_or(&all[..], |c| &c[i][..]);
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        let mut shifted = inputs.to_vec();
        for &j in idx {
            let x0 = input.data()[j];
            let mut at = |k: f64| {
                shifted[i].data_mut()[j] = x0 + k * FD_STEP;
                f(&shifted, false).0
            };
            let numeric = (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * FD_STEP);
            shifted[i].data_mut()[j] = x0;
            let a = analytic[i].data()[j];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let scale = na.sqrt().max(nn.sqrt()).max(1e-12);
        worst = worst.max(diff.sqrt() / scale);
    }
    worst
}

/// Up to `k` distinct random coordinates per tensor.
pub fn sample_coords(inputs: &[Tensor], k: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    inputs
        .iter()
        .map(|t| {
            let n = t.numel();
            if n <= k {
                (0..n).collect()
            } else {
                rand::seq::index::sample(rng, n, k).into_vec()
            }
        })
        .collect()
}

fn weighted_sum(g: &mut Graph, y: Var, weights: &Tensor) -> Var {
    let w = g.constant(weights.clone()).unwrap();
    let p = g.mul(y, w).unwrap();
    g.sum(p).unwrap()
}

fn grads_of(g: &mut Graph, loss: Var, vars: &[Var]) -> Vec<Tensor> {
    let grads = g.backward(loss).unwrap();
    vars.iter()
        .map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect()
}

/// A freshly initialised layer with every parameter jittered, its input, and
/// fixed output weights for `sum(w * f(x))`.
pub struct TransformCase {
    pub layer: Nonlinearity,
    pub store: ParamStore,
    pub input: Tensor,
    pub weights: Tensor,
}

impl TransformCase {
    pub fn new(kind: NonlinearityKind, inverse: bool, seed: u64) -> Self {
        let mut r = rng(seed);
        let shape = Shape::new(2, 4, 5, 5);
        let mut store = ParamStore::new();
        let layer = Nonlinearity::new(kind, 4, inverse, 2, "nl", &mut store, &mut r).unwrap();
        for t in store.values_mut() {
            for v in t.data_mut() {
                *v += r.gen_range(-0.2..0.2);
            }
        }
        let input = match kind {
            NonlinearityKind::Relu => uniform_avoiding(shape, &[0.0], 1e-3, &mut r),
            NonlinearityKind::Sa => {
                // keep |x| away from every channel's threshold θ/2
                let lt = store.values()[0].clone();
                let half: Vec<f64> = lt.data().iter().map(|l| 0.5 * l.exp()).collect();
                uniform_avoiding(shape, &half, 1e-3, &mut r)
            }
            _ => uniform(shape, -1.0, 1.0, &mut r),
        };
        let weights = uniform(shape, -1.0, 1.0, &mut r);
        TransformCase { layer, store, input, weights }
    }

    /// Input followed by every parameter tensor.
    pub fn inputs(&self) -> Vec<Tensor> {
        let mut v = vec![self.input.clone()];
        v.extend(self.store.values().iter().cloned());
        v
    }

    pub fn objective(&self) -> impl Fn(&[Tensor], bool) -> (f64, Vec<Tensor>) + '_ {
        move |values: &[Tensor], want: bool| {
            let mut store = self.store.clone();
            for (dst, src) in store.values_mut().iter_mut().zip(&values[1..]) {
                *dst = src.clone();
            }
            let mut g = Graph::new();
            let x = g.leaf(values[0].clone(), want).unwrap();
            let params = store.bind(&mut g, want).unwrap();
            let y = self.layer.forward(&mut g, &params, x).unwrap();
            let loss = weighted_sum(&mut g, y, &self.weights);
            let value = g.value(loss).item();
            if !want {
                return (value, Vec::new());
            }
            let mut vars = vec![x];
            vars.extend_from_slice(params.vars());
            (value, grads_of(&mut g, loss, &vars))
        }
    }
}

/// Two-stage, eight-channel GDN codec on a 16x16 batch with the full
/// rate-distortion objective and frozen quantisation noise.
pub struct CodecCase {
    pub model: CodecModel,
    pub image: Tensor,
    pub noise: u64,
    pub loss: RdLossConfig,
}

impl CodecCase {
    pub fn new(kind: NonlinearityKind, seed: u64) -> Self {
        let cfg = NetworkConfig {
            stages: 2,
            hidden_channels: 8,
            latent_channels: 8,
            nonlinearity: kind,
            ..NetworkConfig::default()
        };
        let mut model = CodecModel::new(cfg, seed).unwrap();
        let mut r = rng(seed ^ 0x5eed);
        for t in model.store_mut().values_mut() {
            for v in t.data_mut() {
                *v += r.gen_range(-0.05..0.05);
            }
        }
        let image = uniform(Shape::new(2, 3, 16, 16), 0.0, 1.0, &mut r);
        CodecCase { model, image, noise: seed, loss: RdLossConfig::default() }
    }

    pub fn inputs(&self) -> Vec<Tensor> {
        self.model.store().values().to_vec()
    }

    /// Loss and gradients with the parameters replaced by `values`.
    pub fn objective(&self) -> impl Fn(&[Tensor], bool) -> (f64, Vec<Tensor>) + '_ {
        move |values: &[Tensor], want: bool| {
            let mut model = self.model.clone();
            for (dst, src) in model.store_mut().values_mut().iter_mut().zip(values) {
                *dst = src.clone();
            }
            let mut g = Graph::new();
            let params = model.store().bind(&mut g, want).unwrap();
            let (value, loss) = codec_loss(&model, &mut g, &params, &self.image, self.noise, &self.loss);
            if !want {
                return (value, Vec::new());
            }
            (value, grads_of(&mut g, loss, params.vars()))
        }
    }
}

fn codec_loss(
    model: &CodecModel,
    g: &mut Graph,
    params: &Bindings,
    image: &Tensor,
    noise: u64,
    cfg: &RdLossConfig,
) -> (f64, Var) {
    let x = g.constant(image.clone()).unwrap();
    let y = model.analysis_apply(g, params, x).unwrap();
    // the noise offset is frozen so the objective is a smooth function of the parameters
    let yv = g.value(y).clone();
    let mut u = add_uniform_noise(&yv, noise);
    for (a, b) in u.data_mut().iter_mut().zip(yv.data()) {
        *a -= b;
    }
    let u = g.constant(u).unwrap();
    let y_noisy = g.add(y, u).unwrap();
    let x_hat = model.synthesis_apply(g, params, y_noisy).unwrap();
    let terms = rd_loss(g, params, model.prior(), x, x_hat, y_noisy, cfg).unwrap();
    (g.value(terms.loss).item(), terms.loss)
}

/// Shannon bound of the symbols in bits: `n * H(empirical distribution)`.
pub fn empirical_entropy_bits(symbols: &[i32]) -> f64 {
    let mut counts = std::collections::HashMap::new();
    for s in symbols {
        *counts.entry(*s).or_insert(0usize) += 1;
    }
    let n = symbols.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -(c as f64) * p.log2()
        })
        .sum()
}

/// Direct elementwise GDN, written against plain slices.
pub fn gdn_direct(x: &Tensor, beta: &[f64], gamma: &Tensor, inverse: bool) -> Tensor {
    let c = x.shape().channels();
    Tensor::from_fn(x.shape(), |[n, i, yy, xx]| {
        let mut d = beta[i] * beta[i];
        for j in 0..c {
            let v = x.at([n, j, yy, xx]);
            d += gamma.at([i, j, 0, 0]) * v * v;
        }
        if inverse {
            x.at([n, i, yy, xx]) * d.sqrt()
        } else {
            x.at([n, i, yy, xx]) / d.sqrt()
        }
    })
}

/// Graph ops recorded by one transform, with parameter leaves dropped.
pub fn transform_ops(model: &CodecModel, synthesis: bool) -> Vec<&'static str> {
    let cfg = model.config();
    let f = cfg.downsampling_factor().unwrap();
    let mut g = Graph::new();
    let params = model.store().bind(&mut g, false).unwrap();
    let skip = g.len();
    if synthesis {
        let z = g.constant(Tensor::full(Shape::new(1, cfg.latent_channels, 2, 2), 0.3)).unwrap();
        model.synthesis_apply(&mut g, &params, z).unwrap();
    } else {
        let x = g.constant(Tensor::full(Shape::new(1, 3, 2 * f, 2 * f), 0.5)).unwrap();
        model.analysis_apply(&mut g, &params, x).unwrap();
    }
    g.op_names().skip(skip + 1).collect()
}

/// Splits the op sequence at each resampling conv and reports, for every
/// gap (before the first conv, between convs, after the last), whether a
/// GDN normaliser (a channel mixing op) ran there.
pub fn op_layout(ops: &[&str], conv: &str) -> (usize, Vec<bool>) {
    let mut gaps = vec![false];
    let mut convs = 0;
    for op in ops {
        if *op == conv {
            convs += 1;
            gaps.push(false);
        } else if *op == "dense_channelwise" {
            *gaps.last_mut().unwrap() = true;
        }
    }
    (convs, gaps)
}

/// `[false, true × n, false]`: a normaliser between consecutive resamplers only.
pub fn expected_layout(n: usize) -> Vec<bool> {
    let mut v = vec![false];
    v.extend(std::iter::repeat(true).take(n));
    v.push(false);
    v
}
