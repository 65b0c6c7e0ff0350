//! Bjøntegaard delta rate.

use super::curve::RdCurve;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QualityField {
    Psnr,
    /// MS-SSIM in decibels.
    MsssimDb,
}

impl QualityField {
    fn of(self, p: &super::RdPoint) -> f64 {
        match self {
            QualityField::Psnr => p.psnr,
            QualityField::MsssimDb => super::msssim_db(p.msssim),
        }
    }
}

/// Monotone (Fritsch–Carlson) Hermite slopes for strictly increasing `x`.
pub fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() || d0 == 0.0 {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn hermite(x: &[f64], y: &[f64], d: &[f64], k: usize, t: f64) -> f64 {
    let h = x[k + 1] - x[k];
    let s = (t - x[k]) / h;
    let (s2, s3) = (s * s, s * s * s);
    (2.0 * s3 - 3.0 * s2 + 1.0) * y[k]
        + (s3 - 2.0 * s2 + s) * h * d[k]
        + (-2.0 * s3 + 3.0 * s2) * y[k + 1]
        + (s3 - s2) * h * d[k + 1]
}

/// Exact integral of the interpolant over `[lo, hi]` (Simpson's rule is
/// exact on each cubic piece).
fn integrate(x: &[f64], y: &[f64], lo: f64, hi: f64) -> f64 {
    let d = pchip_slopes(x, y);
    let mut total = 0.0;
    for k in 0..x.len() - 1 {
        let (a, b) = (x[k].max(lo), x[k + 1].min(hi));
        if b > a {
            let m = 0.5 * (a + b);
            total += (b - a) / 6.0
                * (hermite(x, y, &d, k, a) + 4.0 * hermite(x, y, &d, k, m) + hermite(x, y, &d, k, b));
        }
    }
    total
}

fn log_rate_vs_quality(curve: &RdCurve, field: QualityField) -> Result<(Vec<f64>, Vec<f64>)> {
    if curve.len() < 2 {
        return Err(Error::domain("BD-rate needs at least two points per curve"));
    }
    let mut pts: Vec<(f64, f64)> = curve
        .points()
        .iter()
        .map(|p| (field.of(p), p.bpp.ln()))
        .collect();
    if pts.iter().any(|(q, r)| !q.is_finite() || !r.is_finite()) {
        return Err(Error::domain("BD-rate needs finite quality and positive rate"));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::domain("two points share the same quality"));
    }
    Ok(pts.into_iter().unzip())
}

/// Average bitrate difference of `test` relative to `anchor` in percent at
/// equal quality; negative means `test` needs fewer bits.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve, field: QualityField) -> Result<f64> {
    let (qa, ra) = log_rate_vs_quality(anchor, field)?;
    let (qt, rt) = log_rate_vs_quality(test, field)?;
    let lo = qa[0].max(qt[0]);
    let hi = qa[qa.len() - 1].min(qt[qt.len() - 1]);
    if !(hi > lo) {
        return Err(Error::domain(format!(
            "quality ranges do not overlap ([{}, {}] vs [{}, {}])",
            qa[0],
            qa[qa.len() - 1],
            qt[0],
            qt[qt.len() - 1]
        )));
    }
    let avg = (integrate(&qt, &rt, lo, hi) - integrate(&qa, &ra, lo, hi)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}
