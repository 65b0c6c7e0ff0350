//! Learned image compression with pluggable modulation-based nonlinear transforms.

pub mod autograd;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod image;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
