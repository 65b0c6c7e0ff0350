//! Quality, rate and energy measures.

mod bdrate;
mod curve;
mod ssim;

pub use bdrate::{bd_rate, pchip_slopes, QualityField};
pub use curve::{RdCurve, RdPoint};
pub use ssim::{msssim, msssim_db, msssim_graph, msssim_images, msssim_scales, MSSSIM_WEIGHTS};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::tensor::Tensor;

/// Mean squared difference of two equally shaped slices.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::config(format!(
            "cannot compare {} and {} samples",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(peak^2 / mse)`; `+inf` for identical inputs.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!("psnr of {} vs {}", a.shape(), b.shape())));
    }
    Ok(psnr_from_mse(mse(a.data(), b.data())?, peak))
}

/// PSNR of two 8-bit images, peak 255.
pub fn psnr_images(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::config("psnr of differently sized images"));
    }
    let err: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64)
        .sum();
    Ok(psnr_from_mse(err as f64 / a.pixels().len() as f64, 255.0))
}

/// `E_i / sum_j E_j` with `E_i` the sum of squares of channel `i` over
/// batch and space.
pub fn channel_energy_ratio(features: &Tensor) -> Result<Vec<f64>> {
    let s = features.shape();
    let plane = s.plane();
    let mut energy = vec![0.0; s.channels()];
    for (i, chunk) in features.data().chunks_exact(plane).enumerate() {
        energy[i % s.channels()] += chunk.iter().map(|v| v * v).sum::<f64>();
    }
    let total: f64 = energy.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::domain("channel energy is zero or not finite"));
    }
    Ok(energy.into_iter().map(|e| e / total).collect())
}
