//! Epoch iteration, metrics log and resumable checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{lr_schedule, train_step, Dataset, RdLossConfig, TrainConfig};
use crate::codec::{Checkpoint, CodecModel, DType};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "step,epoch,lr,loss,bpp,mse,psnr";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    /// 1-based index of the completed step.
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub bpp: f64,
    pub mse: f64,
    pub psnr: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.epoch, self.lr, self.loss, self.bpp, self.mse, self.psnr
        )
    }
}

/// Optimiser position needed to continue a run exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Completed steps.
    pub step: usize,
    pub adam: AdamState,
}

impl TrainState {
    pub fn new(model: &CodecModel) -> Self {
        TrainState {
            step: 0,
            adam: AdamState::new(model.store().shapes()),
        }
    }

    fn append_to(&self, ckpt: &mut Checkpoint, model: &CodecModel) {
        ckpt.tensors.push(("train.step".into(), Tensor::scalar(self.step as f64)));
        ckpt.tensors.push(("adam.step".into(), Tensor::scalar(self.adam.step() as f64)));
        let names: Vec<String> = model.store().iter().map(|(n, _)| n.to_string()).collect();
        for (name, m) in names.iter().zip(self.adam.first_moments()) {
            ckpt.tensors.push((format!("adam.m.{name}"), m.clone()));
        }
        for (name, v) in names.iter().zip(self.adam.second_moments()) {
            ckpt.tensors.push((format!("adam.v.{name}"), v.clone()));
        }
    }

    /// Reads optimiser state stored next to the parameters, if any.
    pub fn from_checkpoint(ckpt: &Checkpoint, model: &CodecModel) -> Result<Option<Self>> {
        let Some(step) = ckpt.get("train.step") else {
            return Ok(None);
        };
        let missing = |n: &str| Error::format(format!("checkpoint is missing {n}"));
        let adam_step = ckpt.get("adam.step").ok_or_else(|| missing("adam.step"))?;
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (name, p) in model.store().iter() {
            for (prefix, out) in [("adam.m.", &mut first), ("adam.v.", &mut second)] {
                let key = format!("{prefix}{name}");
                let t = ckpt.get(&key).ok_or_else(|| missing(&key))?;
                if t.shape() != p.shape() {
                    return Err(Error::format(format!("{key} has the wrong shape")));
                }
                out.push(t.clone());
            }
        }
        Ok(Some(TrainState {
            step: step.item() as usize,
            adam: AdamState::from_parts(adam_step.item() as u64, first, second)?,
        }))
    }
}

/// Parameters plus optimiser state; returns the file's FNV-1a hash.
pub fn save_training_checkpoint(model: &CodecModel, state: &TrainState, path: &Path) -> Result<u64> {
    let mut ckpt = model.to_checkpoint();
    state.append_to(&mut ckpt, model);
    ckpt.save(path, DType::F64)
}

pub fn load_training_checkpoint(path: &Path) -> Result<(CodecModel, Option<TrainState>)> {
    let (ckpt, _) = Checkpoint::load(path)?;
    let model = CodecModel::from_checkpoint(&ckpt)?;
    let state = TrainState::from_checkpoint(&ckpt, &model)?;
    Ok((model, state))
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Rows produced by this call (resumed runs only report new steps).
    pub rows: Vec<MetricsRow>,
    pub state: TrainState,
    pub checkpoint: Option<PathBuf>,
}

/// Seed for the quantisation noise of a given step.
fn noise_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn open_metrics(path: &Path, keep_through: usize) -> Result<BufWriter<File>> {
    let mut kept = vec![METRICS_HEADER.to_string()];
    if keep_through > 0 {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        kept.extend(
            text.lines()
                .skip(1)
                .filter(|l| {
                    l.split(',')
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .is_some_and(|s| s <= keep_through)
                })
                .map(str::to_string),
        );
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in kept {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

/// Runs `cfg` to completion from `state` (a fresh state starts at step 0).
///
/// With `out_dir`, writes `metrics.csv` (one row per step) and
/// `checkpoint.ckpt` every `checkpoint_every` steps and after the last one.
/// Resuming truncates the log to the checkpointed step before appending.
pub fn train_loop(
    model: &mut CodecModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    loss_cfg: &RdLossConfig,
    out_dir: Option<&Path>,
    state: Option<TrainState>,
) -> Result<TrainReport> {
    cfg.validate(model.config().downsampling_factor()?)?;
    loss_cfg.validate()?;
    if dataset.crop() != cfg.crop {
        return Err(Error::config(format!(
            "dataset crops {} but the run expects {}",
            dataset.crop(),
            cfg.crop
        )));
    }
    let per_epoch = dataset.steps_per_epoch(cfg.batch_size)?;
    let mut total = cfg.epochs * per_epoch;
    if let Some(m) = cfg.max_steps {
        total = total.min(m);
    }
    let mut state = state.unwrap_or_else(|| TrainState::new(model));
    let ckpt_path = out_dir.map(|d| d.join(CHECKPOINT_FILE));
    let mut log = match out_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            Some((open_metrics(&d.join(METRICS_FILE), state.step)?, d.join(METRICS_FILE)))
        }
        None => None,
    };

    let mut rows = Vec::new();
    let mut plan: Option<(usize, Vec<_>)> = None;
    while state.step < total {
        let step = state.step;
        let epoch = step / per_epoch;
        if plan.as_ref().map(|p| p.0) != Some(epoch) {
            plan = Some((epoch, dataset.epoch_plan(epoch, cfg.batch_size)?));
        }
        let batch = dataset.batch(&plan.as_ref().expect("plan").1[step % per_epoch])?;
        let lr = lr_schedule(epoch, cfg);
        let stats = train_step(
            model,
            &batch,
            &mut state.adam,
            loss_cfg,
            cfg.clip,
            lr,
            noise_seed(cfg.seed, step),
        )
        .map_err(|e| match e {
            Error::Numeric(m) => Error::numeric(format!("step {}: {m}", step + 1)),
            e => e,
        })?;
        state.step += 1;
        let row = MetricsRow {
            step: state.step,
            epoch,
            lr,
            loss: stats.loss,
            bpp: stats.bpp,
            mse: stats.mse,
            psnr: stats.psnr,
        };
        if state.step % 100 == 0 || state.step == 1 {
            log::info!(
                "step {} epoch {epoch} loss {:.4} bpp {:.4} psnr {:.2}",
                state.step,
                stats.loss,
                stats.bpp,
                stats.psnr
            );
        }
        if let Some((w, p)) = log.as_mut() {
            writeln!(w, "{}", row.to_csv()).map_err(|e| Error::io(p.as_path(), e))?;
        }
        rows.push(row);
        if state.step % cfg.checkpoint_every == 0 || state.step == total {
            if let Some((w, p)) = log.as_mut() {
                w.flush().map_err(|e| Error::io(p.as_path(), e))?;
            }
            if let Some(path) = &ckpt_path {
                save_training_checkpoint(model, &state, path)?;
            }
        }
    }
    if let Some((w, p)) = log.as_mut() {
        w.flush().map_err(|e| Error::io(p.as_path(), e))?;
    }
    Ok(TrainReport {
        rows,
        state,
        checkpoint: ckpt_path,
    })
}
