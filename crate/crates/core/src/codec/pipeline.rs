//! Image to bitstream and back.

use rayon::prelude::*;

use super::{crop, pad_to_factor, CodecModel};
use crate::entropy::{
    bin_probability, quantize_round, range_decode, range_encode, BitstreamHeader, QuantizedCdf,
    QuantizedLatent, DEFAULT_MAX_SYMBOL, DEFAULT_MIN_SYMBOL, LIKELIHOOD_FLOOR,
};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::tensor::Shape;

#[derive(Clone, Debug)]
pub struct CodedImage {
    pub bytes: Vec<u8>,
    pub latent: QuantizedLatent,
    /// Model estimate `sum(-log2 p)` of the latent, in bits.
    pub estimated_bits: f64,
}

#[derive(Clone, Debug)]
pub struct DecodedImage {
    pub image: RgbImage,
    pub latent: QuantizedLatent,
    pub header: BitstreamHeader,
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::config(format!("{v} does not fit in 32 bits")))
}

impl CodecModel {
    /// One coding table per latent channel over the default symbol range.
    pub fn cdf_tables(&self) -> Result<Vec<QuantizedCdf>> {
        let locs = self.prior.locs(&self.store);
        let scales = self.prior.scales(&self.store);
        locs.iter()
            .zip(&scales)
            .map(|(&l, &s)| QuantizedCdf::from_logistic(l, s, DEFAULT_MIN_SYMBOL, DEFAULT_MAX_SYMBOL))
            .collect()
    }

    /// Rounded latent of `image` and the padded extents used.
    pub fn quantized_latent(&self, image: &RgbImage) -> Result<(QuantizedLatent, (usize, usize))> {
        let factor = self.config.downsampling_factor()?;
        let (padded, _) = pad_to_factor(&image.to_tensor(), factor)?;
        let s = padded.shape();
        let y = self.analyse(&padded)?;
        Ok((quantize_round(&y)?, (s.height(), s.width())))
    }

    /// Model rate estimate of a rounded latent in bits.
    pub fn estimate_bits(&self, latent: &QuantizedLatent) -> f64 {
        let locs = self.prior.locs(&self.store);
        let scales = self.prior.scales(&self.store);
        let s = latent.shape;
        let mut bits = 0.0;
        for b in 0..s.batch() {
            for c in 0..s.channels() {
                for &v in latent.channel(b, c) {
                    let p = bin_probability(v as f64, locs[c], scales[c]).max(LIKELIHOOD_FLOOR);
                    bits -= p.log2();
                }
            }
        }
        bits
    }

    fn render(&self, latent: &QuantizedLatent, height: usize, width: usize) -> Result<RgbImage> {
        let x = self.synthesise(&latent.to_tensor())?;
        RgbImage::from_tensor(&crop(&x, height, width)?, 0)
    }
}

/// Decoder output without entropy coding: round, synthesise, crop.
pub fn quantized_reconstruction(model: &CodecModel, image: &RgbImage) -> Result<(RgbImage, QuantizedLatent)> {
    let (latent, _) = model.quantized_latent(image)?;
    let rec = model.render(&latent, image.height(), image.width())?;
    Ok((rec, latent))
}

/// Encodes `image`; `model_checksum` identifies the checkpoint file the
/// decoder must use.
pub fn compress(model: &CodecModel, model_checksum: u64, image: &RgbImage) -> Result<CodedImage> {
    let (latent, (ph, pw)) = model.quantized_latent(image)?;
    let tables = model.cdf_tables()?;
    let payloads: Vec<Vec<u8>> = (0..latent.shape.channels())
        .into_par_iter()
        .map(|c| range_encode(latent.channel(0, c), &tables[c]))
        .collect();
    let cfg = model.config();
    let header = BitstreamHeader {
        model_checksum,
        kind: cfg.nonlinearity.as_str().to_string(),
        stages: to_u32(cfg.stages)?,
        hidden_channels: to_u32(cfg.hidden_channels)?,
        latent_channels: to_u32(cfg.latent_channels)?,
        width: to_u32(image.width())?,
        height: to_u32(image.height())?,
        padded_width: to_u32(pw)?,
        padded_height: to_u32(ph)?,
    };
    let estimated_bits = model.estimate_bits(&latent);
    Ok(CodedImage {
        bytes: header.write(&payloads),
        latent,
        estimated_bits,
    })
}

pub fn decompress(model: &CodecModel, model_checksum: u64, bytes: &[u8]) -> Result<DecodedImage> {
    let (header, payloads) = BitstreamHeader::read(bytes)?;
    if header.model_checksum != model_checksum {
        return Err(Error::Checksum {
            expected: header.model_checksum,
            found: model_checksum,
        });
    }
    let cfg = model.config();
    let matches = header.kind == cfg.nonlinearity.as_str()
        && header.stages as usize == cfg.stages
        && header.hidden_channels as usize == cfg.hidden_channels
        && header.latent_channels as usize == cfg.latent_channels;
    if !matches {
        return Err(Error::format("bitstream was produced by a different architecture"));
    }
    let (w, h) = (header.width as usize, header.height as usize);
    let (pw, ph) = (header.padded_width as usize, header.padded_height as usize);
    let factor = cfg.downsampling_factor()?;
    if w == 0 || h == 0 || pw < w || ph < h || pw - w >= factor || ph - h >= factor {
        return Err(Error::format("inconsistent image extents in bitstream"));
    }
    let (lh, lw) = cfg
        .latent_extents(ph, pw)
        .map_err(|_| Error::format("padded extents are not aligned"))?;
    if payloads.len() != cfg.latent_channels {
        return Err(Error::format(format!(
            "expected {} channel payloads, found {}",
            cfg.latent_channels,
            payloads.len()
        )));
    }
    let tables = model.cdf_tables()?;
    let channels = payloads
        .par_iter()
        .zip(tables.par_iter())
        .map(|(p, t)| range_decode(p, t, lh * lw))
        .collect::<Result<Vec<_>>>()?;
    let latent = QuantizedLatent {
        shape: Shape::new(1, cfg.latent_channels, lh, lw),
        symbols: channels.concat(),
    };
    let image = model.render(&latent, h, w)?;
    Ok(DecodedImage {
        image,
        latent,
        header,
    })
}
