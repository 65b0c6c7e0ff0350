use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod plot;

/// Learned image codec: training, coding and rate-distortion analysis.
#[derive(Parser, Debug)]
#[command(name = "modcodec", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Rate-distortion trade-off.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,

    /// relu, gdn, sa, tam, tpm, tfm, tjm or restsm.
    #[arg(long, global = true)]
    pub nonlinearity: Option<String>,

    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Psnr,
    Msssim,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a directory of PPM images.
    Train {
        /// Image directory (overrides `dataset` from the config file).
        dataset: Option<PathBuf>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compress a PPM image to a bitstream.
    Encode { checkpoint: PathBuf, image: PathBuf },
    /// Reconstruct a PPM image from a bitstream.
    Decode { checkpoint: PathBuf, bitstream: PathBuf },
    /// One RD point per checkpoint, averaged over a directory of images.
    Eval {
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
    },
    /// Bjøntegaard delta rate of a test curve against an anchor curve.
    Bdrate {
        anchor: PathBuf,
        test: PathBuf,
        #[arg(long, value_enum, default_value = "psnr")]
        metric: Metric,
    },
    /// Per-channel energy ratio of one analysis stage's output.
    Energy {
        checkpoint: PathBuf,
        image: PathBuf,
        /// Analysis stage (defaults to the latent).
        #[arg(long)]
        stage: Option<usize>,
    },
    /// Render RD curves to SVG.
    Plot {
        #[arg(required = true)]
        curves: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "psnr")]
        metric: Metric,
    },
}

fn configure_threads() -> Result<(), modcodec::Error> {
    if let Ok(v) = std::env::var("MODCODEC_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| modcodec::Error::config(format!("MODCODEC_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| modcodec::Error::config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
