//! 8-bit RGB images and binary PPM (P6) files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    /// Interleaved RGB, row-major.
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::format("image has an empty extent"));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::format(format!(
                "{} bytes do not form a {width}x{height} RGB image",
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// `[1, 3, H, W]` with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let w = self.width;
        Tensor::from_fn(Shape::new(1, 3, self.height, w), |[_, c, y, x]| {
            self.pixels[(y * w + x) * 3 + c] as f64 / 255.0
        })
    }

    /// Clamps batch item `b` of a `[B, 3, H, W]` tensor to `[0, 1]` and rounds to 8 bits.
    pub fn from_tensor(t: &Tensor, b: usize) -> Result<Self> {
        let s = t.shape();
        if s.channels() != 3 || b >= s.batch() {
            return Err(Error::config(format!("cannot read item {b} of {s} as an RGB image")));
        }
        let (h, w) = (s.height(), s.width());
        let mut pixels = vec![0u8; h * w * 3];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = t.at([b, c, y, x]);
                    pixels[(y * w + x) * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        RgbImage::new(w, h, pixels)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = [0usize; 3];
        if bytes.get(..2) != Some(b"P6") {
            return Err(Error::format("not a binary PPM (P6) file"));
        }
        pos += 2;
        for field in &mut fields {
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format("malformed PPM header"))?;
        }
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(Error::format(format!("unsupported PPM maxval {maxval}")));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::format("malformed PPM header"));
        }
        pos += 1;
        let need = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Error::format("PPM extents overflow"))?;
        let raster = &bytes[pos..];
        if raster.len() < need {
            return Err(Error::format("PPM raster truncated"));
        }
        RgbImage::new(width, height, raster[..need].to_vec())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    /// `size x size` window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Result<Self> {
        if x0 + size > self.width || y0 + size > self.height {
            return Err(Error::config(format!(
                "crop {size}@({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(size * size * 3);
        for y in y0..y0 + size {
            let row = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[row..row + size * 3]);
        }
        RgbImage::new(size, size, pixels)
    }
}
