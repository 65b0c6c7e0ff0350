use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use modcodec::codec::{compress, decompress, pad_to_factor, Checkpoint, CodecModel};
use modcodec::error::{Error, Result};
use modcodec::image::RgbImage;
use modcodec::metrics::{bd_rate, channel_energy_ratio, msssim_images, psnr_images, QualityField, RdCurve, RdPoint};
use modcodec::training::{load_training_checkpoint, train_loop, Dataset, RunConfig};

use crate::{plot, Cli, Command, Metric};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train { dataset, resume } => train(cli, dataset.as_deref(), resume.as_deref()),
        Command::Encode { checkpoint, image } => encode(cli, checkpoint, image),
        Command::Decode { checkpoint, bitstream } => decode(cli, checkpoint, bitstream),
        Command::Eval { inputs } => eval(cli, inputs),
        Command::Bdrate { anchor, test, metric } => bdrate(anchor, test, *metric),
        Command::Energy { checkpoint, image, stage } => energy(cli, checkpoint, image, *stage),
        Command::Plot { curves, metric } => plot_curves(cli, curves, *metric),
    }
}

/// Config file, then command-line overrides.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(lambda) = cli.lambda {
        cfg.loss.lambda = lambda;
    }
    if let Some(kind) = &cli.nonlinearity {
        cfg.set("nonlinearity", kind)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn load_model(path: &Path) -> Result<(CodecModel, u64)> {
    let (ckpt, checksum) = Checkpoint::load(path)?;
    Ok((CodecModel::from_checkpoint(&ckpt)?, checksum))
}

fn train(cli: &Cli, dataset: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let mut cfg = resolve_config(cli)?;
    if let Some(d) = dataset {
        cfg.dataset = Some(d.to_path_buf());
    }
    let dir = cfg
        .dataset
        .clone()
        .ok_or_else(|| Error::config("no dataset directory given"))?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    log::info!("resolved configuration:\n{}", cfg.to_text());

    let (mut model, state) = match resume {
        Some(path) => {
            let (model, state) = load_training_checkpoint(path)?;
            if model.config() != &cfg.network {
                return Err(Error::config(format!(
                    "{} was trained with a different network configuration",
                    path.display()
                )));
            }
            let state = state.ok_or_else(|| {
                Error::config(format!("{} holds no optimiser state", path.display()))
            })?;
            (model, Some(state))
        }
        None => (CodecModel::new(cfg.network.clone(), cfg.train.seed)?, None),
    };
    let ds = Dataset::from_dir(&dir, cfg.train.crop, cfg.train.seed)?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let cfg_path = out.join("config.txt");
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let report = train_loop(&mut model, &ds, &cfg.train, &cfg.loss, Some(&out), state)?;
    if let Some(last) = report.rows.last() {
        println!(
            "step {} loss {:.6} bpp {:.4} psnr {:.2}",
            last.step, last.loss, last.bpp, last.psnr
        );
    }
    if let Some(ckpt) = report.checkpoint {
        println!("checkpoint {}", ckpt.display());
    }
    Ok(())
}

fn encode(cli: &Cli, checkpoint: &Path, image: &Path) -> Result<()> {
    let (model, checksum) = load_model(checkpoint)?;
    let img = RgbImage::read_ppm(image)?;
    let coded = compress(&model, checksum, &img)?;
    let out = cli.out.clone().unwrap_or_else(|| image.with_extension("tsmb"));
    fs::write(&out, &coded.bytes).map_err(|e| Error::io(&out, e))?;
    let pixels = (img.width() * img.height()) as f64;
    println!(
        "{}: {} bytes, {:.4} bpp (model estimate {:.4} bpp)",
        out.display(),
        coded.bytes.len(),
        coded.bytes.len() as f64 * 8.0 / pixels,
        coded.estimated_bits / pixels
    );
    Ok(())
}

fn decode(cli: &Cli, checkpoint: &Path, bitstream: &Path) -> Result<()> {
    let (model, checksum) = load_model(checkpoint)?;
    let bytes = fs::read(bitstream).map_err(|e| Error::io(bitstream, e))?;
    let decoded = decompress(&model, checksum, &bytes)?;
    let out = cli.out.clone().unwrap_or_else(|| bitstream.with_extension("ppm"));
    decoded.image.write_ppm(&out)?;
    let pixels = (decoded.image.width() * decoded.image.height()) as f64;
    println!(
        "{}: {}x{}, {:.4} bpp",
        out.display(),
        decoded.image.width(),
        decoded.image.height(),
        bytes.len() as f64 * 8.0 / pixels
    );
    Ok(())
}

fn ppm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::config(format!("no .ppm images in {}", dir.display())));
    }
    Ok(files)
}

fn eval(cli: &Cli, inputs: &[PathBuf]) -> Result<()> {
    let (dir, checkpoints) = inputs.split_last().expect("clap enforces two inputs");
    let images = ppm_files(dir)?
        .iter()
        .map(|p| RgbImage::read_ppm(p))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for path in checkpoints {
        let (model, checksum) = load_model(path)?;
        let per_image = images
            .par_iter()
            .map(|img| {
                let coded = compress(&model, checksum, img)?;
                let decoded = decompress(&model, checksum, &coded.bytes)?;
                let bpp = coded.bytes.len() as f64 * 8.0 / (img.width() * img.height()) as f64;
                Ok((bpp, psnr_images(img, &decoded.image)?, msssim_images(img, &decoded.image)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_image.len() as f64;
        let point = RdPoint {
            bpp: per_image.iter().map(|p| p.0).sum::<f64>() / n,
            psnr: per_image.iter().map(|p| p.1).sum::<f64>() / n,
            msssim: per_image.iter().map(|p| p.2).sum::<f64>() / n,
        };
        log::info!(
            "{}: bpp {:.4} psnr {:.3} ms-ssim {:.5}",
            path.display(),
            point.bpp,
            point.psnr,
            point.msssim
        );
        points.push(point);
    }
    write_output(cli.out.as_deref(), &RdCurve::new(points)?.to_csv())
}

fn field(metric: Metric) -> QualityField {
    match metric {
        Metric::Psnr => QualityField::Psnr,
        Metric::Msssim => QualityField::MsssimDb,
    }
}

fn bdrate(anchor: &Path, test: &Path, metric: Metric) -> Result<()> {
    let (a, t) = (RdCurve::read(anchor)?, RdCurve::read(test)?);
    let d = bd_rate(&a, &t, field(metric))?;
    // avoid printing "-0.00%"
    let d = if d.abs() < 5e-3 { 0.0 } else { d };
    println!("BD-rate: {d:.2}%");
    Ok(())
}

fn energy(cli: &Cli, checkpoint: &Path, image: &Path, stage: Option<usize>) -> Result<()> {
    let (model, _) = load_model(checkpoint)?;
    let n = model.config().stages;
    let stage = stage.unwrap_or(n);
    if stage > n {
        return Err(Error::config(format!("stage {stage} does not exist (0..={n})")));
    }
    let img = RgbImage::read_ppm(image)?;
    let (padded, _) = pad_to_factor(&img.to_tensor(), model.config().downsampling_factor()?)?;
    let features = model.analysis_stage_outputs(&padded)?;
    let ratios = channel_energy_ratio(&features[stage])?;
    let mut csv = String::from("channel,ratio\n");
    for (c, r) in ratios.iter().enumerate() {
        csv.push_str(&format!("{c},{r}\n"));
    }
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    log::info!("stage {stage}: {} channels, max ratio {max:.4}", ratios.len());
    write_output(cli.out.as_deref(), &csv)
}

fn plot_curves(cli: &Cli, paths: &[PathBuf], metric: Metric) -> Result<()> {
    let curves = paths
        .iter()
        .map(|p| {
            let label = p
                .file_stem()
                .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((label, RdCurve::read(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let svg = plot::render(&curves, metric == Metric::Msssim);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("rd.svg"));
    fs::write(&out, svg).map_err(|e| Error::io(&out, e))?;
    println!("{}", out.display());
    Ok(())
}
