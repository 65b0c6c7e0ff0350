//! Rate-distortion training.

mod config;
mod data;
mod run;

pub use config::RunConfig;
pub use data::{synthetic_corpus, BatchPlan, Dataset};
pub use run::{
    load_training_checkpoint, save_training_checkpoint, train_loop, MetricsRow, TrainReport,
    TrainState, CHECKPOINT_FILE, METRICS_FILE, METRICS_HEADER,
};

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Graph, Var};
use crate::codec::CodecModel;
use crate::entropy::{add_uniform_noise, likelihood, rate_bits, FactorizedPrior};
use crate::error::{Error, Result};
use crate::metrics::{msssim_graph, psnr_from_mse};
use crate::optim::{adam_step, clip_global_norm, AdamState};
use crate::params::Bindings;
use crate::tensor::Tensor;

/// Pixel values are in `[0, 1]`; distortion is measured on the 8-bit scale.
pub const PIXEL_SCALE: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distortion {
    Mse,
    Msssim,
}

impl Distortion {
    pub fn as_str(&self) -> &'static str {
        match self {
            Distortion::Mse => "mse",
            Distortion::Msssim => "msssim",
        }
    }
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Distortion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Distortion::Mse),
            "msssim" => Ok(Distortion::Msssim),
            _ => Err(Error::config(format!("unknown distortion {s:?}; expected mse or msssim"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdLossConfig {
    pub lambda: f64,
    pub distortion: Distortion,
}

impl Default for RdLossConfig {
    fn default() -> Self {
        RdLossConfig {
            lambda: 0.0130,
            distortion: Distortion::Mse,
        }
    }
}

impl RdLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub clip: f64,
    pub crop: usize,
    pub seed: u64,
    /// Steps between checkpoints; the final step is always saved.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Full-scale protocol: 100 epochs of batch 16, 256 crops, Adam at 1e-4
    /// halved from epoch 64, clipping at 1.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 100,
            max_steps: None,
            lr: 1e-4,
            lr_drop_epoch: 64,
            lr_drop_factor: 0.5,
            clip: 1.0,
            crop: 256,
            seed: 0,
            checkpoint_every: 1000,
        }
    }

    /// CPU-sized runs: 2000 steps of batch 8 on 64 crops.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 250,
            max_steps: Some(2000),
            lr: 5e-4,
            lr_drop_epoch: 160,
            crop: 64,
            checkpoint_every: 500,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self, downsampling: usize) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.crop == 0 || self.checkpoint_every == 0 {
            return Err(Error::config("batch_size, epochs, crop and checkpoint_every must be positive"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("invalid learning rate {}", self.lr)));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor.is_finite()) {
            return Err(Error::config("lr_drop_factor must be positive"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config("clip threshold must be positive"));
        }
        if self.crop % downsampling != 0 {
            return Err(Error::config(format!(
                "crop {} is not a multiple of the downsampling factor {downsampling}",
                self.crop
            )));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Base rate before `lr_drop_epoch`, scaled by `lr_drop_factor` afterwards.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.lr_drop_epoch {
        cfg.lr
    } else {
        cfg.lr * cfg.lr_drop_factor
    }
}

/// Graph handles of the rate-distortion objective.
#[derive(Clone, Copy, Debug)]
pub struct RdTerms {
    pub loss: Var,
    pub bpp: Var,
    /// Mean squared error on the `[0, 1]` scale in mse mode, `1 - MS-SSIM` otherwise.
    pub distortion: Var,
}

/// `lambda * 255^2 * MSE + bpp`, or `lambda * (1 - MS-SSIM) + bpp`, with
/// `bpp` the noisy-latent rate over `batch * H * W` pixels.
pub fn rd_loss(
    g: &mut Graph,
    params: &Bindings,
    prior: &FactorizedPrior,
    x: Var,
    x_hat: Var,
    y_noisy: Var,
    cfg: &RdLossConfig,
) -> Result<RdTerms> {
    cfg.validate()?;
    let s = g.shape(x);
    if g.shape(x_hat) != s {
        return Err(Error::config(format!(
            "reconstruction {} does not match input {s}",
            g.shape(x_hat)
        )));
    }
    let p = likelihood(g, params, y_noisy, prior)?;
    let bits = rate_bits(g, p)?;
    let bpp = g.scale(bits, 1.0 / (s.batch() * s.height() * s.width()) as f64)?;
    let (distortion, weight) = match cfg.distortion {
        Distortion::Mse => {
            let diff = g.sub(x, x_hat)?;
            let sq = g.square(diff)?;
            (g.mean(sq)?, cfg.lambda * PIXEL_SCALE * PIXEL_SCALE)
        }
        Distortion::Msssim => {
            let m = msssim_graph(g, x, x_hat, 1.0)?;
            let neg = g.scale(m, -1.0)?;
            (g.offset(neg, 1.0)?, cfg.lambda)
        }
    };
    let weighted = g.scale(distortion, weight)?;
    let loss = g.add(weighted, bpp)?;
    Ok(RdTerms {
        loss,
        bpp,
        distortion,
    })
}

/// Scalars reported by one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub bpp: f64,
    /// MSE on the `[0, 1]` scale, whatever the training distortion.
    pub mse: f64,
    pub psnr: f64,
    pub grad_norm: f64,
}

/// Forward pass shared by training and validation: analysis, noise,
/// synthesis, objective. Returns the graph, parameter bindings, the terms and
/// the reconstruction.
fn forward(
    model: &CodecModel,
    batch: &Tensor,
    loss_cfg: &RdLossConfig,
    noise_seed: u64,
    trainable: bool,
) -> Result<(Graph, Bindings, RdTerms, Var, Var)> {
    let mut g = Graph::new();
    let params = model.store().bind(&mut g, trainable)?;
    let x = g.constant(batch.clone())?;
    let y = model.analysis_apply(&mut g, &params, x)?;
    let noise = add_uniform_noise(&Tensor::zeros(g.shape(y)), noise_seed);
    let u = g.constant(noise)?;
    let y_noisy = g.add(y, u)?;
    let x_hat = model.synthesis_apply(&mut g, &params, y_noisy)?;
    let terms = rd_loss(&mut g, &params, model.prior(), x, x_hat, y_noisy, loss_cfg)?;
    Ok((g, params, terms, x, x_hat))
}

fn mse_of(g: &Graph, x: Var, x_hat: Var) -> f64 {
    let (a, b) = (g.value(x).data(), g.value(x_hat).data());
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64
}

/// Objective on `batch` without updating anything.
pub fn evaluate_batch(
    model: &CodecModel,
    batch: &Tensor,
    loss_cfg: &RdLossConfig,
    noise_seed: u64,
) -> Result<StepStats> {
    let (g, _, terms, x, x_hat) = forward(model, batch, loss_cfg, noise_seed, false)?;
    let mse = mse_of(&g, x, x_hat);
    Ok(StepStats {
        loss: g.value(terms.loss).item(),
        bpp: g.value(terms.bpp).item(),
        mse,
        psnr: psnr_from_mse(mse, 1.0),
        grad_norm: 0.0,
    })
}

/// One Adam step on `batch` (`[B, 3, crop, crop]`, values in `[0, 1]`).
pub fn train_step(
    model: &mut CodecModel,
    batch: &Tensor,
    state: &mut AdamState,
    loss_cfg: &RdLossConfig,
    clip: f64,
    lr: f64,
    noise_seed: u64,
) -> Result<StepStats> {
    let (mut g, params, terms, x, x_hat) = forward(model, batch, loss_cfg, noise_seed, true)
        .map_err(|e| match e {
            Error::Numeric(m) => Error::numeric(format!("forward pass: {m}")),
            e => e,
        })?;
    let loss = g.value(terms.loss).item();
    let bpp = g.value(terms.bpp).item();
    let mse = mse_of(&g, x, x_hat);
    let mut grads = g.backward(terms.loss)?;
    let mut flat: Vec<Tensor> = params
        .vars()
        .iter()
        .zip(model.store().values())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    let grad_norm = clip_global_norm(&mut flat, clip)?;
    adam_step(model.store_mut().values_mut(), &flat, state, lr)?;
    Ok(StepStats {
        loss,
        bpp,
        mse,
        psnr: psnr_from_mse(mse, 1.0),
        grad_norm,
    })
}

/// Stacks equally sized images into `[B, 3, H, W]`.
pub fn batch_tensor(images: &[crate::image::RgbImage]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let t: Vec<Tensor> = images.iter().map(|i| i.to_tensor()).collect();
    Tensor::stack(&t)
}

#[cfg(test)]
mod tests;
