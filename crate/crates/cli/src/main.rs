//! `hazelight` command line.
//!
//! Exit codes: 0 ok, 2 usage or config, 3 dataset, 4 checkpoint, 5 quality
//! model, 6 gradient check failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hazelight::losses::LossKind;
use hazelight::network::Precision;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "hazelight", version, about = "Low-light enhancement through a learned atmospheric component")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Overrides {
    /// Root seed for initialization, shuffling, augmentation and validation split.
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch budget per training phase.
    #[arg(long)]
    epochs: Option<usize>,
    /// Training objective (l1, brightness, smooth, ssim, total).
    #[arg(long)]
    loss: Option<LossKind>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Supervised training on a paired dataset (`low/` and `high/`).
    Train {
        /// JSON training config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Pretraining followed by quality-gated self-training rounds.
    Curriculum {
        #[arg(long)]
        config: PathBuf,
        /// Paired dataset with true labels.
        #[arg(long)]
        labeled: PathBuf,
        /// Dataset whose `low/` images form the unlabeled pool.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Admission margin over the labeled-set mean NIQE; `inf` admits everything.
        #[arg(long, value_parser = parse_tau)]
        tau: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Enhances PNG images or directories of them.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Per-image NIQE, and PSNR/SSIM against references, as CSV.
    Evaluate {
        /// Directory of images to score.
        #[arg(long)]
        data: PathBuf,
        /// Directory of references matched by file name.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Fitted NIQE model (JSON).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fits a NIQE model on a directory of pristine images.
    FitNiqe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = hazelight::iqa::DEFAULT_PATCH)]
        patch: usize,
    },
    /// Average histograms of two image sets and their correlation.
    Histcompare {
        /// First set; inverted unless `--no-invert`.
        first: PathBuf,
        second: PathBuf,
        #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u32).range(1..))]
        bins: u32,
        #[arg(long)]
        no_invert: bool,
        /// Directory for `first.csv`, `second.csv` and `correlation.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the network and loss gradients.
    Gradcheck {
        #[arg(long, default_value = "total")]
        loss: LossKind,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value = "single")]
        precision: Precision,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-tensor report path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Writes a synthetic paired dataset, plus hazy renderings of the
    /// targets under `hazy/` when requested.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 2.0)]
        gamma_min: f64,
        #[arg(long, default_value_t = 3.0)]
        gamma_max: f64,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        hazy: bool,
        /// File name prefix of the written samples.
        #[arg(long, default_value = "fixture")]
        prefix: String,
    },
}

fn parse_tau(s: &str) -> Result<f64, String> {
    hazelight::training::parse_tau(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(fail) => {
            eprintln!("error: {}", fail.message);
            ExitCode::from(fail.code)
        }
    }
}
