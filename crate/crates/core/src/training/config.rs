//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use super::{RdLossConfig, TrainConfig};
use crate::codec::NetworkConfig;
use crate::error::{Error, Result};

/// Everything a training run needs, addressable key by key.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub loss: RdLossConfig,
    pub dataset: Option<PathBuf>,
}

impl Default for RunConfig {
    /// Desk-scale model (N = 32, M = 48) and schedule.
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig {
                hidden_channels: 32,
                latent_channels: 48,
                ..NetworkConfig::default()
            },
            train: TrainConfig::desk(),
            loss: RdLossConfig::default(),
            dataset: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 21] = [
        "stages",
        "hidden_channels",
        "latent_channels",
        "kernel_size",
        "stride",
        "nonlinearity",
        "restsm_depth",
        "input_channels",
        "lambda",
        "distortion",
        "batch_size",
        "epochs",
        "max_steps",
        "lr",
        "lr_drop_epoch",
        "lr_drop_factor",
        "clip",
        "crop",
        "seed",
        "checkpoint_every",
        "dataset",
    ];

    /// Applies `text` on top of the defaults. Blank lines and `#` comments
    /// are ignored; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (net, tr, loss) = (&mut self.network, &mut self.train, &mut self.loss);
        match key {
            "stages" => net.stages = parse(key, value)?,
            "hidden_channels" => net.hidden_channels = parse(key, value)?,
            "latent_channels" => net.latent_channels = parse(key, value)?,
            "kernel_size" => net.kernel_size = parse(key, value)?,
            "stride" => net.stride = parse(key, value)?,
            "nonlinearity" => net.nonlinearity = value.parse()?,
            "restsm_depth" => net.restsm_depth = parse(key, value)?,
            "input_channels" => net.input_channels = parse(key, value)?,
            "lambda" => loss.lambda = parse(key, value)?,
            "distortion" => loss.distortion = value.parse()?,
            "batch_size" => tr.batch_size = parse(key, value)?,
            "epochs" => tr.epochs = parse(key, value)?,
            "max_steps" => {
                tr.max_steps = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "lr" => tr.lr = parse(key, value)?,
            "lr_drop_epoch" => tr.lr_drop_epoch = parse(key, value)?,
            "lr_drop_factor" => tr.lr_drop_factor = parse(key, value)?,
            "clip" => tr.clip = parse(key, value)?,
            "crop" => tr.crop = parse(key, value)?,
            "seed" => tr.seed = parse(key, value)?,
            "checkpoint_every" => tr.checkpoint_every = parse(key, value)?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            _ => return Err(Error::config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        self.train.validate(self.network.downsampling_factor()?)
    }

    /// Fully resolved configuration in the same format [`parse`](Self::parse) reads.
    pub fn to_text(&self) -> String {
        let (n, t, l) = (&self.network, &self.train, &self.loss);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("stages", n.stages.to_string());
        kv("hidden_channels", n.hidden_channels.to_string());
        kv("latent_channels", n.latent_channels.to_string());
        kv("kernel_size", n.kernel_size.to_string());
        kv("stride", n.stride.to_string());
        kv("nonlinearity", n.nonlinearity.to_string());
        kv("restsm_depth", n.restsm_depth.to_string());
        kv("input_channels", n.input_channels.to_string());
        kv("lambda", l.lambda.to_string());
        kv("distortion", l.distortion.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("max_steps", t.max_steps.map_or("none".into(), |v| v.to_string()));
        kv("lr", t.lr.to_string());
        kv("lr_drop_epoch", t.lr_drop_epoch.to_string());
        kv("lr_drop_factor", t.lr_drop_factor.to_string());
        kv("clip", t.clip.to_string());
        kv("crop", t.crop.to_string());
        kv("seed", t.seed.to_string());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        if let Some(d) = &self.dataset {
            kv("dataset", d.display().to_string());
        }
        s
    }
}
