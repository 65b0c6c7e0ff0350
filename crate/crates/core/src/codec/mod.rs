//! Analysis and synthesis transforms built from strided convolutions and a
//! pluggable nonlinearity.

mod checkpoint;
mod padding;
mod pipeline;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Padding, Var};
use crate::entropy::FactorizedPrior;
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, Bindings, ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};
use crate::transforms::{Nonlinearity, NonlinearityKind, DEFAULT_RESTSM_DEPTH};

pub use checkpoint::{fnv1a64, Checkpoint, DType, CHECKPOINT_MAGIC};
pub use padding::{crop, pad_to_factor};
pub use pipeline::{compress, decompress, quantized_reconstruction, CodedImage, DecodedImage};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Number of nonlinear stages `n`; there are `n + 1` convolutions per side.
    pub stages: usize,
    pub hidden_channels: usize,
    pub latent_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub nonlinearity: NonlinearityKind,
    pub restsm_depth: usize,
    pub input_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            stages: 3,
            hidden_channels: 128,
            latent_channels: 192,
            kernel_size: 5,
            stride: 2,
            nonlinearity: NonlinearityKind::Gdn,
            restsm_depth: DEFAULT_RESTSM_DEPTH,
            input_channels: 3,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_channels == 0 || self.latent_channels == 0 || self.input_channels == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be positive"));
        }
        if self.restsm_depth == 0 {
            return Err(Error::config("restsm_depth must be at least 1"));
        }
        self.downsampling_factor().map(|_| ())
    }

    /// `stride^(n+1)`.
    pub fn downsampling_factor(&self) -> Result<usize> {
        u32::try_from(self.stages + 1)
            .ok()
            .and_then(|e| self.stride.checked_pow(e))
            .ok_or_else(|| Error::config("downsampling factor overflows"))
    }

    /// Latent spatial extents for an image of `height x width`.
    pub fn latent_extents(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let f = self.downsampling_factor()?;
        if height == 0 || width == 0 || height % f != 0 || width % f != 0 {
            return Err(Error::config(format!(
                "image extents {height}x{width} are not positive multiples of {f}"
            )));
        }
        Ok((height / f, width / f))
    }
}

/// Strided convolution (analysis) or transposed convolution (synthesis).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub transposed: bool,
}

impl ConvLayer {
    fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        config: &NetworkConfig,
        transposed: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let k = config.kernel_size;
        let shape = if transposed {
            Shape::new(in_channels, out_channels, k, k)
        } else {
            Shape::new(out_channels, in_channels, k, k)
        };
        let weight = glorot_uniform(shape, in_channels * k * k, out_channels * k * k, rng);
        ConvLayer {
            weight: store.add(format!("{name}.weight"), weight),
            bias: store.add(
                format!("{name}.bias"),
                Tensor::zeros(Shape::channel_vector(out_channels)),
            ),
            in_channels,
            out_channels,
            kernel: k,
            stride: config.stride,
            transposed,
        }
    }

    fn apply(&self, g: &mut Graph, params: &Bindings, x: Var) -> Result<Var> {
        let (w, b) = (params.var(self.weight), Some(params.var(self.bias)));
        let pad = self.kernel / 2;
        if self.transposed {
            g.conv_transpose2d(x, w, b, self.stride, pad, self.stride - 1)
        } else {
            g.conv2d(x, w, b, self.stride, Padding::Zero(pad))
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel + self.out_channels
    }

    /// Multiply-accumulates for an input of `height x width`; the bias add is
    /// folded into the last accumulation.
    pub fn flops(&self, height: usize, width: usize) -> u64 {
        let positions = if self.transposed {
            height * width
        } else {
            height.div_ceil(self.stride) * width.div_ceil(self.stride)
        };
        (self.in_channels * self.out_channels * self.kernel * self.kernel * positions) as u64
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// `f(H_down(x))`, with `f` absent on the last stage.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisStage {
    pub conv: ConvLayer,
    pub nonlinearity: Option<Nonlinearity>,
}

/// `H_up(f_inv(x))`, with `f_inv` absent on the first stage.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisStage {
    pub nonlinearity: Option<Nonlinearity>,
    pub conv: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct CodecModel {
    config: NetworkConfig,
    store: ParamStore,
    analysis: Vec<AnalysisStage>,
    synthesis: Vec<SynthesisStage>,
    prior: FactorizedPrior,
}

impl CodecModel {
    /// Builds a freshly initialised model; parameters depend only on `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let n = config.stages;
        let (c_in, c_hid, c_lat) = (
            config.input_channels,
            config.hidden_channels,
            config.latent_channels,
        );

        let mut analysis = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let from = if k == 0 { c_in } else { c_hid };
            let to = if k == n { c_lat } else { c_hid };
            let name = format!("analysis.{k}");
            let conv = ConvLayer::new(&mut store, &format!("{name}.conv"), from, to, &config, false, &mut rng);
            let nonlinearity = (k < n)
                .then(|| {
                    Nonlinearity::new(
                        config.nonlinearity,
                        c_hid,
                        false,
                        config.restsm_depth,
                        &format!("{name}.nl"),
                        &mut store,
                        &mut rng,
                    )
                })
                .transpose()?;
            analysis.push(AnalysisStage { conv, nonlinearity });
        }

        let mut synthesis = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let from = if k == 0 { c_lat } else { c_hid };
            let to = if k == n { c_in } else { c_hid };
            let name = format!("synthesis.{k}");
            let nonlinearity = (k > 0)
                .then(|| {
                    Nonlinearity::new(
                        config.nonlinearity,
                        c_hid,
                        true,
                        config.restsm_depth,
                        &format!("{name}.nl"),
                        &mut store,
                        &mut rng,
                    )
                })
                .transpose()?;
            let conv = ConvLayer::new(&mut store, &format!("{name}.conv"), from, to, &config, true, &mut rng);
            synthesis.push(SynthesisStage { nonlinearity, conv });
        }

        let prior = FactorizedPrior::new(&mut store, "prior", c_lat);
        Ok(CodecModel {
            config,
            store,
            analysis,
            synthesis,
            prior,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn prior(&self) -> &FactorizedPrior {
        &self.prior
    }

    pub fn analysis_stages(&self) -> &[AnalysisStage] {
        &self.analysis
    }

    pub fn synthesis_stages(&self) -> &[SynthesisStage] {
        &self.synthesis
    }

    /// Image `[B, C_in, H, W]` to latent `[B, M, H/f, W/f]`.
    pub fn analysis_apply(&self, g: &mut Graph, params: &Bindings, image: Var) -> Result<Var> {
        let s = g.shape(image);
        if s.channels() != self.config.input_channels {
            return Err(Error::config(format!(
                "analysis expects {} input channels, got {s}",
                self.config.input_channels
            )));
        }
        self.config.latent_extents(s.height(), s.width())?;
        let mut x = image;
        for stage in &self.analysis {
            x = stage.conv.apply(g, params, x)?;
            if let Some(f) = &stage.nonlinearity {
                x = f.forward(g, params, x)?;
            }
        }
        Ok(x)
    }

    /// Latent `[B, M, h, w]` to reconstruction `[B, C_in, h*f, w*f]`.
    pub fn synthesis_apply(&self, g: &mut Graph, params: &Bindings, latent: Var) -> Result<Var> {
        let s = g.shape(latent);
        if s.channels() != self.config.latent_channels {
            return Err(Error::config(format!(
                "synthesis expects {} latent channels, got {s}",
                self.config.latent_channels
            )));
        }
        let mut x = latent;
        for stage in &self.synthesis {
            if let Some(f) = &stage.nonlinearity {
                x = f.forward(g, params, x)?;
            }
            x = stage.conv.apply(g, params, x)?;
        }
        Ok(x)
    }

    /// Inference-only analysis of a tensor.
    pub fn analyse(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.store.bind(&mut g, false)?;
        let x = g.constant(image.clone())?;
        let y = self.analysis_apply(&mut g, &params, x)?;
        Ok(g.value(y).clone())
    }

    /// Output of every analysis stage, last one being the latent.
    pub fn analysis_stage_outputs(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let params = self.store.bind(&mut g, false)?;
        let mut x = g.constant(image.clone())?;
        self.config.latent_extents(image.shape().height(), image.shape().width())?;
        let mut outputs = Vec::with_capacity(self.analysis.len());
        for stage in &self.analysis {
            x = stage.conv.apply(&mut g, &params, x)?;
            if let Some(f) = &stage.nonlinearity {
                x = f.forward(&mut g, &params, x)?;
            }
            outputs.push(g.value(x).clone());
        }
        Ok(outputs)
    }

    /// Inference-only synthesis of a tensor.
    pub fn synthesise(&self, latent: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.store.bind(&mut g, false)?;
        let y = g.constant(latent.clone())?;
        let x = self.synthesis_apply(&mut g, &params, y)?;
        Ok(g.value(x).clone())
    }

    /// Every learnable scalar, prior included.
    pub fn count_params(&self) -> usize {
        self.store.numel()
    }

    /// Learnable scalars of the nonlinear layers alone.
    pub fn count_nonlinearity_params(&self) -> usize {
        self.nonlinearities()
            .map(|f| f.count_params(&self.store))
            .sum()
    }

    fn nonlinearities(&self) -> impl Iterator<Item = &Nonlinearity> {
        self.analysis
            .iter()
            .filter_map(|s| s.nonlinearity.as_ref())
            .chain(self.synthesis.iter().filter_map(|s| s.nonlinearity.as_ref()))
    }

    /// FLOPs of one analysis plus one synthesis pass on a `height x width` image.
    pub fn count_flops(&self, height: usize, width: usize) -> Result<u64> {
        self.config.latent_extents(height, width)?;
        let (c, depth) = (self.config.hidden_channels, self.config.restsm_depth);
        let kind = self.config.nonlinearity;
        let (mut h, mut w) = (height, width);
        let mut total = 0u64;
        for stage in &self.analysis {
            total += stage.conv.flops(h, w);
            h /= self.config.stride;
            w /= self.config.stride;
            if stage.nonlinearity.is_some() {
                total += kind.flops(c, h, w, depth);
            }
        }
        for stage in &self.synthesis {
            if stage.nonlinearity.is_some() {
                total += kind.flops(c, h, w, depth);
            }
            total += stage.conv.flops(h, w);
            h *= self.config.stride;
            w *= self.config.stride;
        }
        Ok(total)
    }
}
