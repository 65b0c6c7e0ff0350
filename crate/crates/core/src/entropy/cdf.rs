//! Fixed-point frequency tables for the range coder.

use crate::error::{Error, Result};

pub const PRECISION_BITS: u32 = 16;
const TOTAL: u32 = 1 << PRECISION_BITS;

pub const DEFAULT_MIN_SYMBOL: i32 = -64;
pub const DEFAULT_MAX_SYMBOL: i32 = 63;

/// Cumulative 16-bit frequencies over `[min_sym, max_sym]` plus a trailing
/// escape bin; totals always sum to 2^16.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedCdf {
    min_sym: i32,
    max_sym: i32,
    /// `cumulative[i]` is the start of bin `i`; the last entry is 2^16.
    cumulative: Vec<u32>,
}

/// Logistic CDF for the table path. Uses the portable `libm` exp so the same
/// prior produces the same table on every platform.
fn table_cdf(x: f64, loc: f64, scale: f64) -> f64 {
    let z = (x - loc) / scale;
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

fn table_bin(v: f64, loc: f64, scale: f64) -> f64 {
    // evaluate on the small side of the mean to keep tail bins accurate
    if v > loc {
        table_cdf(-(v - 0.5), -loc, scale) - table_cdf(-(v + 0.5), -loc, scale)
    } else {
        table_cdf(v + 0.5, loc, scale) - table_cdf(v - 0.5, loc, scale)
    }
}

impl QuantizedCdf {
    /// Table for a logistic prior with the given location and scale.
    pub fn from_logistic(loc: f64, scale: f64, min_sym: i32, max_sym: i32) -> Result<Self> {
        if !(scale > 0.0) || !loc.is_finite() || !scale.is_finite() {
            return Err(Error::config(format!("invalid logistic prior loc={loc} scale={scale}")));
        }
        if min_sym > max_sym {
            return Err(Error::config(format!("empty symbol range [{min_sym}, {max_sym}]")));
        }
        let mut probs: Vec<f64> = (min_sym..=max_sym)
            .map(|v| table_bin(v as f64, loc, scale))
            .collect();
        let below = table_cdf(min_sym as f64 - 0.5, loc, scale);
        let above = table_cdf(-(max_sym as f64 + 0.5), -loc, scale);
        probs.push(below + above);
        Self::from_probabilities(min_sym, &probs)
    }

    /// Quantizes `probs` (symbols `min_sym..`, escape last) to 16-bit
    /// frequencies. Each bin receives 1 plus its floored share of the rest;
    /// leftover units go to the largest fractional parts, lower index first
    /// on ties.
    pub fn from_probabilities(min_sym: i32, probs: &[f64]) -> Result<Self> {
        let bins = probs.len();
        if bins < 2 || bins > TOTAL as usize {
            return Err(Error::config(format!("table needs 2..=65536 bins, got {bins}")));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::config("bin probabilities must be finite and non-negative"));
        }
        let mass: f64 = probs.iter().sum();
        if !(mass > 0.0) {
            return Err(Error::config("bin probabilities sum to zero"));
        }
        let budget = TOTAL - bins as u32;
        let shares: Vec<f64> = probs.iter().map(|p| p / mass * budget as f64).collect();
        let mut freqs: Vec<u32> = shares.iter().map(|s| s.floor() as u32).collect();
        let used: u32 = freqs.iter().sum();
        let mut leftover = budget.saturating_sub(used) as usize;
        if leftover > 0 {
            let mut order: Vec<usize> = (0..bins).collect();
            order.sort_by(|&a, &b| {
                let fa = shares[a] - shares[a].floor();
                let fb = shares[b] - shares[b].floor();
                fb.total_cmp(&fa).then(a.cmp(&b))
            });
            for &i in order.iter().cycle() {
                if leftover == 0 {
                    break;
                }
                freqs[i] += 1;
                leftover -= 1;
            }
        }
        let mut cumulative = Vec::with_capacity(bins + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for f in &freqs {
            acc += f + 1;
            cumulative.push(acc);
        }
        debug_assert_eq!(acc, TOTAL);
        let max_sym = min_sym
            .checked_add(bins as i32 - 2)
            .ok_or_else(|| Error::config("symbol range overflows"))?;
        Ok(QuantizedCdf {
            min_sym,
            max_sym,
            cumulative,
        })
    }

    pub fn min_symbol(&self) -> i32 {
        self.min_sym
    }

    pub fn max_symbol(&self) -> i32 {
        self.max_sym
    }

    /// Number of bins including the escape bin.
    pub fn bins(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn escape_index(&self) -> usize {
        self.bins() - 1
    }

    pub fn frequency(&self, index: usize) -> u32 {
        self.cumulative[index + 1] - self.cumulative[index]
    }

    pub fn frequencies(&self) -> Vec<u32> {
        (0..self.bins()).map(|i| self.frequency(i)).collect()
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    pub fn start(&self, index: usize) -> u32 {
        self.cumulative[index]
    }

    /// Bin index of `symbol`, or the escape bin when out of range.
    pub fn index_of(&self, symbol: i32) -> usize {
        if symbol < self.min_sym || symbol > self.max_sym {
            self.escape_index()
        } else {
            (symbol - self.min_sym) as usize
        }
    }

    pub fn symbol_of(&self, index: usize) -> Option<i32> {
        (index < self.escape_index()).then(|| self.min_sym + index as i32)
    }

    /// Bin whose interval contains `target < 2^16`.
    pub fn lookup(&self, target: u32) -> usize {
        self.cumulative.partition_point(|&c| c <= target) - 1
    }

    /// Serialized form used for byte-level comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.cumulative.len());
        out.extend_from_slice(&self.min_sym.to_le_bytes());
        out.extend_from_slice(&self.max_sym.to_le_bytes());
        for c in &self.cumulative {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Ideal code length of `symbol` in bits under this table, escape
    /// payload included.
    pub fn cost_bits(&self, symbol: i32) -> f64 {
        let i = self.index_of(symbol);
        let bits = PRECISION_BITS as f64 - (self.frequency(i) as f64).log2();
        if i == self.escape_index() {
            bits + 32.0
        } else {
            bits
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equiprobable_pair() {
        let t = QuantizedCdf::from_probabilities(0, &[0.5, 0.5]).unwrap();
        assert_eq!(t.frequencies(), vec![32768, 32768]);
    }

    #[test]
    fn default_range_table_is_valid() {
        for (loc, scale) in [(0.0, 1.0), (3.2, 0.05), (-70.0, 2.0), (0.0, 1e-4), (0.4, 500.0)] {
            let t = QuantizedCdf::from_logistic(loc, scale, DEFAULT_MIN_SYMBOL, DEFAULT_MAX_SYMBOL).unwrap();
            assert_eq!(t.bins(), 129);
            assert_eq!(*t.cumulative().last().unwrap(), 65536);
            assert!(t.frequencies().iter().all(|&f| f >= 1));
            assert!(t.cumulative().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn peaked_prior_concentrates_mass() {
        let t = QuantizedCdf::from_logistic(0.0, 1e-4, -4, 4).unwrap();
        assert_eq!(t.frequency(t.index_of(0)), 65536 - 9);
        assert_eq!(t.frequency(t.escape_index()), 1);
    }

    #[test]
    fn largest_remainder_breaks_ties_low() {
        // three equal bins: budget 65533 = 3 * 21844 + 1
        let t = QuantizedCdf::from_probabilities(0, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.frequencies(), vec![21846, 21845, 21845]);
    }

    #[test]
    fn lookup_inverts_cumulative() {
        let t = QuantizedCdf::from_logistic(0.5, 3.0, -10, 10).unwrap();
        for i in 0..t.bins() {
            assert_eq!(t.lookup(t.start(i)), i);
            assert_eq!(t.lookup(t.start(i) + t.frequency(i) - 1), i);
        }
        assert_eq!(t.index_of(-11), t.escape_index());
        assert_eq!(t.index_of(11), t.escape_index());
        assert_eq!(t.symbol_of(t.index_of(-10)), Some(-10));
        assert_eq!(t.symbol_of(t.escape_index()), None);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(QuantizedCdf::from_probabilities(0, &[1.0]).is_err());
        assert!(QuantizedCdf::from_probabilities(0, &[0.0, 0.0]).is_err());
        assert!(QuantizedCdf::from_probabilities(0, &[f64::NAN, 1.0]).is_err());
        assert!(QuantizedCdf::from_logistic(0.0, 0.0, -1, 1).is_err());
        assert!(QuantizedCdf::from_logistic(0.0, 1.0, 1, -1).is_err());
    }
}
