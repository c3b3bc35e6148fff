//! `projsynth`: every stage of the MR-to-X-ray projection pipeline as a
//! subcommand.
//!
//! ```text
//! projsynth gen-phantom --size 64 --seed 7 --out work/volumes
//! projsynth project --volumes work/volumes --views 64 --train 56 --test 8 --out work/data
//! projsynth train --dataset work/data/dataset.json --arch unet --loss l1 --epochs 30 --out work/unet
//! projsynth eval --dataset work/data/dataset.json --model work/unet --out work/eval
//! ```
//!
//! Exit codes: 0 success, 1 usage, 2 data or I/O failure, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use projsynth_core::Error;

#[derive(Debug, Parser)]
#[command(name = "projsynth", version, about = "Synthesize X-ray projections from MR projections")]
struct Cli {
    /// JSON pipeline configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rasterize the co-registered MR and X-ray head phantom volumes.
    GenPhantom(GenPhantomArgs),
    /// Forward-project both volumes over a circular trajectory into paired projections.
    Project(ProjectArgs),
    /// Train a generator on a projection dataset.
    Train(TrainArgs),
    /// Synthesize X-ray projections from the MR projections of a dataset.
    Synth(SynthArgs),
    /// Score synthesized projections against their labels.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct GenPhantomArgs {
    /// Voxels per axis.
    #[arg(long)]
    size: Option<usize>,
    /// Seed for the randomly placed inclusions.
    #[arg(long)]
    seed: Option<u64>,
    /// Voxel edge in mm [default: 192 mm / size].
    #[arg(long)]
    spacing: Option<f64>,
    /// Sub-samples per voxel edge for partial-volume antialiasing.
    #[arg(long)]
    supersample: Option<usize>,
    /// Output directory; receives mr.json/.raw and xray.json/.raw.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    /// Directory holding the mr and xray volume containers.
    #[arg(long)]
    volumes: PathBuf,
    /// Number of views on the trajectory.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    views: Option<u64>,
    /// Angular range covered by the views, degrees.
    #[arg(long)]
    range: Option<f64>,
    /// Source-to-isocenter distance, mm.
    #[arg(long)]
    sid: Option<f64>,
    /// Source-to-detector distance, mm.
    #[arg(long)]
    sdd: Option<f64>,
    /// Detector side in pixels.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    detector: Option<u64>,
    /// Number of training pairs to record in the split.
    #[arg(long)]
    train: Option<usize>,
    /// Number of test pairs to record in the split.
    #[arg(long)]
    test: Option<usize>,
    /// Seed of the train/test shuffle.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Worker threads for ray casting.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write 16-bit PGM previews.
    #[arg(long)]
    pgm: bool,
    /// Output directory; receives the projections and dataset.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Unet,
    Resnet,
    Crn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    L1,
    Perceptual,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset manifest written by `project`.
    #[arg(long)]
    dataset: PathBuf,
    /// Generator architecture [default: unet, or the config's model].
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    /// Training loss [default: l1].
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Epochs [default: 100].
    #[arg(long)]
    epochs: Option<usize>,
    /// ADAM learning rate [default: 0.004].
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for shuffling and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed for parameter initialization.
    #[arg(long)]
    init_seed: Option<u64>,
    /// Checkpoint every N epochs (0: only at the end).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// VGG-19 weights for the perceptual loss [default: seeded random network].
    #[arg(long)]
    evalnet: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Output directory for weights, history.csv and checkpoints.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Dataset manifest.
    #[arg(long)]
    dataset: PathBuf,
    /// Training output directory holding arch.json and model.json.
    #[arg(long)]
    model: PathBuf,
    /// Which views to synthesize [default: test if the manifest has a split].
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Also write 16-bit PGM previews.
    #[arg(long)]
    pgm: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset manifest with the labels.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory of synthesized projections written by `synth`.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    synth: Option<PathBuf>,
    /// Synthesize with this trained model first, writing the projections and PGM previews to --out.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Also score the MR input projections as a no-op baseline.
    #[arg(long)]
    baseline: bool,
    /// Output directory for report.json and report.csv.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = config::PipelineConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::GenPhantom(a) => commands::gen_phantom(cfg, a),
        Command::Project(a) => commands::project(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
