//! Multi-scale structural similarity, written with graph ops so the same
//! code serves as a metric and as a differentiable training loss.

use crate::autograd::{Graph, Padding, UnaryOp, Var};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::tensor::{Shape, Tensor};

pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Per-scale terms are floored here before the fractional powers.
const TERM_FLOOR: f64 = 1e-6;

/// Scales usable for an `height x width` image: each scale must still fit
/// the 11-tap window. Five scales need both extents ≥ 176.
pub fn msssim_scales(height: usize, width: usize) -> Result<usize> {
    let m = (0..MSSSIM_WEIGHTS.len())
        .take_while(|&j| height.min(width) >> j >= WINDOW)
        .count();
    if m == 0 {
        return Err(Error::domain(format!(
            "MS-SSIM needs images of at least {WINDOW}x{WINDOW}, got {height}x{width}"
        )));
    }
    Ok(m)
}

fn gaussian_taps() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

struct Filters {
    vertical: Var,
    horizontal: Var,
    pool: Var,
}

impl Filters {
    fn new(g: &mut Graph) -> Result<Self> {
        let taps = gaussian_taps();
        Ok(Filters {
            vertical: g.constant(Tensor::from_vec(Shape::new(1, 1, WINDOW, 1), taps.clone())?)?,
            horizontal: g.constant(Tensor::from_vec(Shape::new(1, 1, 1, WINDOW), taps)?)?,
            pool: g.constant(Tensor::full(Shape::new(1, 1, 2, 2), 0.25))?,
        })
    }

    fn blur(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let v = g.conv2d(x, self.vertical, None, 1, Padding::Zero(0))?;
        g.conv2d(v, self.horizontal, None, 1, Padding::Zero(0))
    }

    fn downsample(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.conv2d(x, self.pool, None, 2, Padding::Zero(0))
    }
}

/// `(2u + c) / (v + w + c)`.
fn ratio(g: &mut Graph, u: Var, v: Var, w: Var, c: f64) -> Result<Var> {
    let num = g.scale(u, 2.0)?;
    let num = g.offset(num, c)?;
    let den = g.add(v, w)?;
    let den = g.offset(den, c)?;
    g.div(num, den)
}

/// Mean MS-SSIM over the batch of two `[B, C, H, W]` tensors; channels are
/// scored separately and averaged. Fewer than five scales are used when the
/// images are too small, with the leading weights renormalised.
pub fn msssim_graph(g: &mut Graph, a: Var, b: Var, peak: f64) -> Result<Var> {
    let s = g.shape(a);
    if g.shape(b) != s {
        return Err(Error::config(format!("MS-SSIM of {s} vs {}", g.shape(b))));
    }
    let scales = msssim_scales(s.height(), s.width())?;
    let weight_sum: f64 = MSSSIM_WEIGHTS[..scales].iter().sum();
    let (c1, c2) = ((K1 * peak).powi(2), (K2 * peak).powi(2));
    let f = Filters::new(g)?;
    let planes = Shape::new(s.batch() * s.channels(), 1, s.height(), s.width());
    let mut x = g.reshape(a, planes)?;
    let mut y = g.reshape(b, planes)?;
    let mut product: Option<Var> = None;
    for j in 0..scales {
        if j > 0 {
            x = f.downsample(g, x)?;
            y = f.downsample(g, y)?;
        }
        let mx = f.blur(g, x)?;
        let my = f.blur(g, y)?;
        let (mxx, myy, mxy) = (g.square(mx)?, g.square(my)?, g.mul(mx, my)?);
        let xx = g.square(x)?;
        let yy = g.square(y)?;
        let xy = g.mul(x, y)?;
        let (bxx, byy, bxy) = (f.blur(g, xx)?, f.blur(g, yy)?, f.blur(g, xy)?);
        let vx = g.sub(bxx, mxx)?;
        let vy = g.sub(byy, myy)?;
        let cov = g.sub(bxy, mxy)?;
        let mut map = ratio(g, cov, vx, vy, c2)?;
        if j + 1 == scales {
            let lum = ratio(g, mxy, mxx, myy, c1)?;
            map = g.mul(map, lum)?;
        }
        let term = g.mean_spatial(map)?;
        let term = g.lower_bound(term, TERM_FLOOR)?;
        let term = g.unary(term, UnaryOp::Pow(MSSSIM_WEIGHTS[j] / weight_sum))?;
        product = Some(match product {
            None => term,
            Some(p) => g.mul(p, term)?,
        });
    }
    g.mean(product.expect("at least one scale"))
}

/// MS-SSIM of two `[B, C, H, W]` tensors with dynamic range `peak`.
pub fn msssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let mut g = Graph::new();
    let av = g.constant(a.clone())?;
    let bv = g.constant(b.clone())?;
    let m = msssim_graph(&mut g, av, bv, peak)?;
    Ok(g.value(m).item())
}

pub fn msssim_images(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::config("MS-SSIM of differently sized images"));
    }
    let scale = |i: &RgbImage| i.to_tensor().map(|v| v * 255.0);
    msssim(&scale(a), &scale(b), 255.0)
}

/// `-10 log10(1 - d)`; `+inf` when `d = 1`.
pub fn msssim_db(d: f64) -> f64 {
    if d >= 1.0 {
        f64::INFINITY
    } else {
        -10.0 * (1.0 - d).log10()
    }
}
