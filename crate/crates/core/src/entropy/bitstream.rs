//! Container for coded images.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TSMB";
pub const VERSION: u8 = 1;

/// Everything in the container ahead of the payloads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub model_checksum: u64,
    pub kind: String,
    pub stages: u32,
    pub hidden_channels: u32,
    pub latent_channels: u32,
    pub width: u32,
    pub height: u32,
    pub padded_width: u32,
    pub padded_height: u32,
}

impl BitstreamHeader {
    /// Serializes the header followed by the payload table and payloads.
    pub fn write(&self, payloads: &[Vec<u8>]) -> Vec<u8> {
        let total: usize = payloads.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(64 + self.kind.len() + 4 * payloads.len() + total);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.model_checksum.to_le_bytes());
        out.extend_from_slice(&(self.kind.len() as u32).to_le_bytes());
        out.extend_from_slice(self.kind.as_bytes());
        for v in [
            self.stages,
            self.hidden_channels,
            self.latent_channels,
            self.width,
            self.height,
            self.padded_width,
            self.padded_height,
            payloads.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in payloads {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        }
        for p in payloads {
            out.extend_from_slice(p);
        }
        out
    }

    /// Parses a container, returning the header and borrowed payloads.
    pub fn read(bytes: &[u8]) -> Result<(BitstreamHeader, Vec<&[u8]>)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("not a bitstream (bad magic)"));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::format(format!("unsupported bitstream version {version}")));
        }
        let model_checksum = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let kind_len = r.u32()? as usize;
        let kind = String::from_utf8(r.take(kind_len)?.to_vec())
            .map_err(|_| Error::format("nonlinearity name is not UTF-8"))?;
        let header = BitstreamHeader {
            model_checksum,
            kind,
            stages: r.u32()?,
            hidden_channels: r.u32()?,
            latent_channels: r.u32()?,
            width: r.u32()?,
            height: r.u32()?,
            padded_width: r.u32()?,
            padded_height: r.u32()?,
        };
        let count = r.u32()? as usize;
        if count > bytes.len() {
            return Err(Error::format("payload count exceeds stream size"));
        }
        let lengths = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let payloads = lengths
            .iter()
            .map(|&n| r.take(n as usize))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after payloads"));
        }
        Ok((header, payloads))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("bitstream truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
