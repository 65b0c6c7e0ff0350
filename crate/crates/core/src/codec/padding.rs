use crate::autograd::reflect_index;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn reflect(i: usize, extent: usize) -> usize {
    reflect_index(i as isize, extent)
}

/// Reflect-pads right and bottom up to the next multiple of `factor`,
/// replicating when an extent is 1. Returns the padded tensor and the
/// original `(height, width)`.
pub fn pad_to_factor(image: &Tensor, factor: usize) -> Result<(Tensor, (usize, usize))> {
    if factor == 0 {
        return Err(Error::config("padding factor must be at least 1"));
    }
    let s = image.shape();
    let (h, w) = (s.height(), s.width());
    let (ph, pw) = (h.div_ceil(factor) * factor, w.div_ceil(factor) * factor);
    if (ph, pw) == (h, w) {
        return Ok((image.clone(), (h, w)));
    }
    let out = Tensor::from_fn(Shape::new(s.batch(), s.channels(), ph, pw), |[b, c, y, x]| {
        image.at([b, c, reflect(y, h), reflect(x, w)])
    });
    Ok((out, (h, w)))
}

/// Top-left `height x width` window.
pub fn crop(image: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let s = image.shape();
    if height > s.height() || width > s.width() {
        return Err(Error::config(format!("cannot crop {s} to {height}x{width}")));
    }
    Ok(Tensor::from_fn(
        Shape::new(s.batch(), s.channels(), height, width),
        |idx| image.at(idx),
    ))
}
