//! 64-bit carry-less range coder over 16-bit frequency tables.

use super::cdf::{QuantizedCdf, PRECISION_BITS};
use crate::error::{Error, Result};

const TOP: u64 = 1 << 56;
const BOT: u64 = 1 << 48;

pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
        }
    }

    /// Codes the interval `[cum, cum + freq)` out of `2^bits`.
    pub fn encode(&mut self, cum: u32, freq: u32, bits: u32) {
        debug_assert!(freq > 0 && (cum as u64 + freq as u64) <= 1u64 << bits);
        self.range >>= bits;
        self.low = self.low.wrapping_add(cum as u64 * self.range);
        self.range *= freq as u64;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    pub fn encode_symbol(&mut self, cdf: &QuantizedCdf, symbol: i32) {
        let i = cdf.index_of(symbol);
        self.encode(cdf.start(i), cdf.frequency(i), PRECISION_BITS);
        if i == cdf.escape_index() {
            let raw = symbol as u32;
            self.encode(raw >> 16, 1, 16);
            self.encode(raw & 0xFFFF, 1, 16);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..8 {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    low: u64,
    range: u64,
    code: u64,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        if input.len() < 8 {
            return Err(Error::format("range-coded payload truncated"));
        }
        let code = u64::from_be_bytes(input[..8].try_into().expect("8 bytes"));
        Ok(RangeDecoder {
            low: 0,
            range: u64::MAX,
            code,
            input,
            pos: 8,
        })
    }

    fn target(&mut self, bits: u32) -> Result<u32> {
        self.range >>= bits;
        let v = self.code.wrapping_sub(self.low) / self.range;
        if v >= 1u64 << bits {
            return Err(Error::format("corrupt range-coded payload"));
        }
        Ok(v as u32)
    }

    fn consume(&mut self, cum: u32, freq: u32) -> Result<()> {
        self.low = self.low.wrapping_add(cum as u64 * self.range);
        self.range *= freq as u64;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            let byte = *self
                .input
                .get(self.pos)
                .ok_or_else(|| Error::format("range-coded payload truncated"))?;
            self.pos += 1;
            self.code = (self.code << 8) | byte as u64;
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(())
    }

    fn decode_raw16(&mut self) -> Result<u32> {
        let v = self.target(16)?;
        self.consume(v, 1)?;
        Ok(v)
    }

    pub fn decode_symbol(&mut self, cdf: &QuantizedCdf) -> Result<i32> {
        let target = self.target(PRECISION_BITS)?;
        let i = cdf.lookup(target);
        self.consume(cdf.start(i), cdf.frequency(i))?;
        match cdf.symbol_of(i) {
            Some(s) => Ok(s),
            None => {
                let hi = self.decode_raw16()?;
                let lo = self.decode_raw16()?;
                Ok(((hi << 16) | lo) as i32)
            }
        }
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

pub fn range_encode(symbols: &[i32], cdf: &QuantizedCdf) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        enc.encode_symbol(cdf, s);
    }
    enc.finish()
}

pub fn range_decode(payload: &[u8], cdf: &QuantizedCdf, count: usize) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(payload)?;
    (0..count).map(|_| dec.decode_symbol(cdf)).collect()
}
