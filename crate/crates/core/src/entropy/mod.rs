//! The quantization channel and rate model.
//!
//! Training replaces rounding by additive uniform noise; inference rounds and
//! codes the integers with a range coder driven by per-channel tables derived
//! from a factorized logistic prior.

mod bitstream;
mod cdf;
mod prior;
mod quantize;
mod range_coder;

pub use bitstream::{BitstreamHeader, MAGIC as BITSTREAM_MAGIC, VERSION as BITSTREAM_VERSION};
pub use cdf::{QuantizedCdf, DEFAULT_MAX_SYMBOL, DEFAULT_MIN_SYMBOL, PRECISION_BITS};
pub use prior::{
    bin_probability, likelihood, logistic_cdf, rate_bits, FactorizedPrior, LIKELIHOOD_FLOOR,
    SCALE_MIN,
};
pub use quantize::{add_uniform_noise, quantize_round, QuantizedLatent};
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder};
