//! Training images, crop schedules and a procedural corpus.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::tensor::Tensor;

/// `(image index, x0, y0)` for every item of one batch.
pub type BatchPlan = Vec<(usize, usize, usize)>;

#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<RgbImage>,
    crop: usize,
    seed: u64,
}

impl Dataset {
    pub fn from_images(images: Vec<RgbImage>, crop: usize, seed: u64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::config("dataset is empty"));
        }
        if crop == 0 {
            return Err(Error::config("crop size must be positive"));
        }
        if let Some((i, img)) = images
            .iter()
            .enumerate()
            .find(|(_, im)| im.width() < crop || im.height() < crop)
        {
            return Err(Error::config(format!(
                "image {i} ({}x{}) is smaller than the {crop}px crop",
                img.width(),
                img.height()
            )));
        }
        Ok(Dataset { images, crop, seed })
    }

    /// Every `*.ppm` file in `dir`, in file-name order.
    pub fn from_dir(dir: &Path, crop: usize, seed: u64) -> Result<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
            .collect();
        paths.sort();
        let images = paths
            .iter()
            .map(|p| RgbImage::read_ppm(p))
            .collect::<Result<Vec<_>>>()?;
        if images.is_empty() {
            return Err(Error::config(format!("no .ppm images in {}", dir.display())));
        }
        Self::from_images(images, crop, seed)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn crop(&self) -> usize {
        self.crop
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }

    /// `floor(len / batch)`; a dataset smaller than one batch is an error.
    pub fn steps_per_epoch(&self, batch: usize) -> Result<usize> {
        if batch == 0 || self.images.len() < batch {
            return Err(Error::config(format!(
                "{} images cannot fill a batch of {batch}",
                self.images.len()
            )));
        }
        Ok(self.images.len() / batch)
    }

    /// Shuffled order and uniform crop offsets for every step of `epoch`;
    /// depends only on the seed and the epoch number.
    pub fn epoch_plan(&self, epoch: usize, batch: usize) -> Result<Vec<BatchPlan>> {
        let steps = self.steps_per_epoch(batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        order.shuffle(&mut rng);
        Ok(order[..steps * batch]
            .chunks(batch)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&i| {
                        let img = &self.images[i];
                        let x0 = rng.gen_range(0..=img.width() - self.crop);
                        let y0 = rng.gen_range(0..=img.height() - self.crop);
                        (i, x0, y0)
                    })
                    .collect()
            })
            .collect())
    }

    pub fn batch(&self, plan: &BatchPlan) -> Result<Tensor> {
        let crops = plan
            .iter()
            .map(|&(i, x0, y0)| self.images[i].crop(x0, y0, self.crop))
            .collect::<Result<Vec<_>>>()?;
        super::batch_tensor(&crops)
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // correlated channels, like most natural colours
    let base = rng.gen_range(0.1..0.9);
    [0, 1, 2].map(|_| (base + rng.gen_range(-0.25..0.25f64)).clamp(0.0, 1.0))
}

/// Deterministic photo-like test images: smooth illumination gradients,
/// overlapping shaded objects with sharp boundaries, periodic textures and
/// sensor grain.
pub fn synthetic_corpus(count: usize, size: usize, seed: u64) -> Vec<RgbImage> {
    (0..count)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            synthetic_image(size, &mut rng)
        })
        .collect()
}

enum Shape2 {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, rot: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

fn synthetic_image(size: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let n = size as f64;
    let (top, bottom) = (random_colour(rng), random_colour(rng));
    let angle = rng.gen_range(0.0..2.0 * PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let wave = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.0..2.0 * PI));

    let objects: Vec<(Shape2, [f64; 3], [f64; 3], f64, f64)> = (0..rng.gen_range(3..9))
        .map(|_| {
            let shape = if rng.gen_bool(0.6) {
                Shape2::Ellipse {
                    cx: rng.gen_range(0.0..n),
                    cy: rng.gen_range(0.0..n),
                    rx: rng.gen_range(0.05..0.35) * n,
                    ry: rng.gen_range(0.05..0.35) * n,
                    rot: rng.gen_range(0.0..PI),
                }
            } else {
                let (x0, y0) = (rng.gen_range(-0.2..0.8) * n, rng.gen_range(-0.2..0.8) * n);
                Shape2::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.gen_range(0.1..0.6) * n,
                    y1: y0 + rng.gen_range(0.1..0.6) * n,
                }
            };
            let texture_freq = if rng.gen_bool(0.4) { rng.gen_range(0.2..1.2) } else { 0.0 };
            let texture_angle = rng.gen_range(0.0..PI);
            (shape, random_colour(rng), random_colour(rng), texture_freq, texture_angle)
        })
        .collect();
    let grain = rng.gen_range(0.0..0.02);

    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let t = (((fx - n / 2.0) * dx + (fy - n / 2.0) * dy) / n + 0.5).clamp(0.0, 1.0);
            let mut c = lerp(top, bottom, t);
            let shade = 0.05 * ((fx / n * wave.0 * PI * 2.0 + wave.2).sin() * (fy / n * wave.1 * PI * 2.0).cos());
            c = c.map(|v| v + shade);
            for (shape, c0, c1, freq, tangle) in &objects {
                let inside = match *shape {
                    Shape2::Ellipse { cx, cy, rx, ry, rot } => {
                        let (ux, uy) = (fx - cx, fy - cy);
                        let (vx, vy) = (ux * rot.cos() + uy * rot.sin(), -ux * rot.sin() + uy * rot.cos());
                        let r = (vx / rx).powi(2) + (vy / ry).powi(2);
                        (r <= 1.0).then(|| r.sqrt())
                    }
                    Shape2::Rect { x0, y0, x1, y1 } => (fx >= x0 && fx < x1 && fy >= y0 && fy < y1)
                        .then(|| ((fx - x0) / (x1 - x0) + (fy - y0) / (y1 - y0)) / 2.0),
                };
                if let Some(s) = inside {
                    c = lerp(*c0, *c1, s);
                    if *freq > 0.0 {
                        let phase = (fx * tangle.cos() + fy * tangle.sin()) * freq;
                        c = c.map(|v| v + 0.08 * phase.sin());
                    }
                }
            }
            for v in c {
                let noisy = v + grain * (rng.gen::<f64>() + rng.gen::<f64>() - 1.0);
                pixels.push((noisy.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    RgbImage::new(size, size, pixels).expect("synthetic image extents")
}
