//! `stainreg`: stain estimation, augmentation, normalization, toy training,
//! synthetic experiments and metric evaluation.
//!
//! Exit status: 0 success, 1 I/O or parse error, 2 image unusable for stain
//! estimation, 3 failed verification.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;

#[derive(Parser)]
#[command(name = "stainreg", version, about = "Stain augmentation and consistency training tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate an image's stain matrix and write it as JSON.
    Estimate(EstimateArgs),
    /// Write stain-perturbed copies of images plus a manifest.
    Augment(AugmentArgs),
    /// Re-render images with a target stain appearance.
    Normalize(NormalizeArgs),
    /// Train the small classifier on a class-per-folder dataset.
    TrainToy(TrainArgs),
    /// Render synthetic source/target domains and run the cross-domain experiment.
    Synth(SynthArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Method {
    Macenko,
    Vahadane,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Avg {
    Weighted,
    Macro,
}

#[derive(Args)]
pub struct EstimateArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "vahadane")]
    method: Method,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sparsity weight of the Vahadane factorization.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct AugmentArgs {
    /// A PNG file or a directory of PNGs.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Augmented copies per input.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use this stain JSON for every image instead of estimating per image.
    #[arg(long)]
    stains: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "vahadane")]
    method: Method,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct NormalizeArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Stain JSON of the target appearance.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "vahadane")]
    method: Method,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Class-per-folder PNG dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_consistency: bool,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log CSV; defaults to `<checkpoint stem>_log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Verify backprop against finite differences before training.
    #[arg(long)]
    check_grads: bool,
    /// Fixed stain JSON for augmentation instead of per-image estimates.
    #[arg(long)]
    stains: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Augmented views per image.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Experiment JSON; the bundled default when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Only write the class folders.
    #[arg(long)]
    render_only: bool,
    /// Skip writing the class folders.
    #[arg(long, conflicts_with = "render_only")]
    no_images: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predictions CSV (`id,label` or one label per line).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth CSV in the same layout and row order.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value = "weighted")]
    averaging: Avg,
    /// `k19`, `k16` or a label map JSON, applied to both files.
    #[arg(long)]
    label_map: Option<String>,
    #[arg(long, default_value = "eval")]
    method: String,
    #[arg(long, default_value = "-")]
    dataset: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Augment(a) => commands::augment(a),
        Command::Normalize(a) => commands::normalize(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Synth(a) => commands::synth(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
