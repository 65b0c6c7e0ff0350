use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr: f64,
    pub msssim: f64,
}

/// Points ordered by strictly increasing bpp.
#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    /// Sorts by bpp; rejects duplicate rates and out-of-range values.
    pub fn new(mut points: Vec<RdPoint>) -> Result<Self> {
        for p in &points {
            if !(p.bpp >= 0.0 && p.bpp.is_finite()) {
                return Err(Error::domain(format!("invalid bpp {}", p.bpp)));
            }
            if !(0.0..=1.0).contains(&p.msssim) {
                return Err(Error::domain(format!("MS-SSIM {} outside [0, 1]", p.msssim)));
            }
            if p.psnr.is_nan() {
                return Err(Error::domain("PSNR is NaN"));
            }
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[0].bpp == w[1].bpp) {
            return Err(Error::domain("RD curve has two points at the same rate"));
        }
        Ok(RdCurve { points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bpp,psnr,msssim\n");
        for p in &self.points {
            writeln!(s, "{},{},{}", p.bpp, p.psnr, p.msssim).expect("string write");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("bpp,psnr,msssim") => {}
            _ => return Err(Error::format("RD curve CSV must start with bpp,psnr,msssim")),
        }
        let points = lines
            .enumerate()
            .map(|(i, line)| {
                let f: Vec<f64> = line
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(format!("row {}: not a number", i + 2)))?;
                match f[..] {
                    [bpp, psnr, msssim] => Ok(RdPoint { bpp, psnr, msssim }),
                    _ => Err(Error::format(format!("row {}: expected 3 fields", i + 2))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        RdCurve::new(points).map_err(|e| Error::format(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(bpp: f64, psnr: f64) -> RdPoint {
        RdPoint { bpp, psnr, msssim: 0.9 }
    }

    #[test]
    fn sorted_on_construction() {
        let c = RdCurve::new(vec![pt(0.5, 30.0), pt(0.1, 25.0), pt(1.0, 34.0)]).unwrap();
        let rates: Vec<f64> = c.points().iter().map(|p| p.bpp).collect();
        assert_eq!(rates, vec![0.1, 0.5, 1.0]);
    }

    #[test]
    fn invalid_points() {
        assert!(RdCurve::new(vec![pt(0.5, 30.0), pt(0.5, 31.0)]).is_err());
        assert!(RdCurve::new(vec![pt(-0.1, 30.0)]).is_err());
        assert!(RdCurve::new(vec![RdPoint { bpp: 0.1, psnr: 30.0, msssim: 1.5 }]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = RdCurve::new(vec![pt(0.125, 27.5), pt(0.75, f64::INFINITY)]).unwrap();
        let text = c.to_csv();
        assert!(text.starts_with("bpp,psnr,msssim\n0.125,27.5,0.9\n"));
        assert_eq!(RdCurve::from_csv(&text).unwrap(), c);
        assert!(RdCurve::from_csv("rate,psnr\n1,2").is_err());
        assert!(RdCurve::from_csv("bpp,psnr,msssim\n1,2").is_err());
        assert!(RdCurve::from_csv("bpp,psnr,msssim\n1,x,0.5").is_err());
    }
}
