//! Binary checkpoint files.
//!
//! Layout (little-endian): magic, config record, tensor table, then the
//! FNV-1a 64 hash of every preceding byte.

use std::fs;
use std::path::Path;

use super::{CodecModel, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSMCKPT1";

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// On-disk element type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    /// Model parameters followed by any auxiliary state, in file order.
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::config(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
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
            .ok_or_else(|| Error::format("checkpoint truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format("checkpoint string is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self, dtype: DType) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let c = &self.config;
        put_str(&mut out, c.nonlinearity.as_str())?;
        for v in [
            c.stages,
            c.hidden_channels,
            c.latent_channels,
            c.kernel_size,
            c.stride,
            c.restsm_depth,
        ] {
            put_u32(&mut out, v)?;
        }
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_str(&mut out, name)?;
            out.push(dtype.tag());
            for d in t.shape().dims() {
                put_u32(&mut out, d)?;
            }
            match dtype {
                DType::F32 => t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
                DType::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
            return Err(Error::format("checkpoint truncated"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 8);
        if &body[..8] != CHECKPOINT_MAGIC {
            return Err(Error::format("not a checkpoint (bad magic)"));
        }
        let expected = u64::from_le_bytes(trailer.try_into().expect("8 bytes"));
        let found = fnv1a64(body);
        if expected != found {
            return Err(Error::Checksum { expected, found });
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let kind = r
            .string()?
            .parse()
            .map_err(|e: Error| Error::format(format!("checkpoint config: {e}")))?;
        let mut config = NetworkConfig {
            nonlinearity: kind,
            stages: r.u32()?,
            hidden_channels: r.u32()?,
            latent_channels: r.u32()?,
            kernel_size: r.u32()?,
            stride: r.u32()?,
            restsm_depth: r.u32()?,
            ..NetworkConfig::default()
        };
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(body.len()));
        for _ in 0..count {
            let name = r.string()?;
            let tag = r.take(1)?[0];
            let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::format("tensor extents overflow"))?;
            let data: Vec<f64> = match tag {
                0 => r
                    .take(numel.checked_mul(4).ok_or_else(|| Error::format("tensor too large"))?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                1 => r
                    .take(numel.checked_mul(8).ok_or_else(|| Error::format("tensor too large"))?)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                t => return Err(Error::format(format!("unknown dtype tag {t} for {name}"))),
            };
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            tensors.push((name, Tensor::from_vec(shape, data)?));
        }
        if r.pos != body.len() {
            return Err(Error::format("trailing bytes in checkpoint"));
        }
        if let Some(w) = tensors.iter().find(|(n, _)| n == "analysis.0.conv.weight") {
            config.input_channels = w.1.shape().channels();
        }
        Ok(Checkpoint { config, tensors })
    }

    /// Writes the file (via a temporary sibling and rename) and returns the
    /// FNV-1a hash of the whole file.
    pub fn save(&self, path: &Path, dtype: DType) -> Result<u64> {
        let bytes = self.to_bytes(dtype)?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(fnv1a64(&bytes))
    }

    /// Reads a checkpoint and the FNV-1a hash of the whole file.
    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_bytes(&bytes)?, fnv1a64(&bytes)))
    }
}

impl CodecModel {
    /// Parameters only; callers may append auxiliary tensors.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            tensors: self
                .store
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    /// Rebuilds the model and overwrites every parameter from `ckpt`.
    /// Tensors with unknown names are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = CodecModel::new(ckpt.config.clone(), 0)?;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let t = ckpt
                .get(&name)
                .ok_or_else(|| Error::format(format!("checkpoint is missing {name}")))?;
            let slot = model.store.get_mut(id);
            if slot.shape() != t.shape() {
                return Err(Error::format(format!(
                    "{name}: checkpoint has {}, model expects {}",
                    t.shape(),
                    slot.shape()
                )));
            }
            t.ensure_finite(&name)
                .map_err(|_| Error::format(format!("{name} holds non-finite values")))?;
            *slot = t.clone();
        }
        Ok(model)
    }
}
