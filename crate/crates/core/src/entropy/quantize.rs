use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// `y + u`, `u ~ U(-0.5, 0.5)` i.i.d., reproducible from `seed`.
pub fn add_uniform_noise(y: &Tensor, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = y.clone();
    for v in out.data_mut() {
        *v += rng.gen::<f64>() - 0.5;
    }
    out
}

/// Integer latent symbols with their tensor shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedLatent {
    pub shape: Shape,
    pub symbols: Vec<i32>,
}

impl QuantizedLatent {
    pub fn to_tensor(&self) -> Tensor {
        let data = self.symbols.iter().map(|&s| s as f64).collect();
        Tensor::from_vec(self.shape, data).expect("latent shape")
    }

    /// Symbols of one channel of batch item `b`.
    pub fn channel(&self, b: usize, c: usize) -> &[i32] {
        let plane = self.shape.plane();
        let start = (b * self.shape.channels() + c) * plane;
        &self.symbols[start..start + plane]
    }
}

/// Round half away from zero.
pub fn quantize_round(y: &Tensor) -> Result<QuantizedLatent> {
    let symbols = y
        .data()
        .iter()
        .map(|&v| {
            let r = v.round();
            if r.is_finite() && r >= i32::MIN as f64 && r <= i32::MAX as f64 {
                Ok(r as i32)
            } else {
                Err(Error::numeric(format!("latent value {v} cannot be quantized to 32 bits")))
            }
        })
        .collect::<Result<_>>()?;
    Ok(QuantizedLatent {
        shape: y.shape(),
        symbols,
    })
}
