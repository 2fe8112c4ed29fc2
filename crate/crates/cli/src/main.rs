//! `fgmhd`: reproducible fractal-dimension experiments from the command line.
//!
//! Every run is determined by its flags (including `--seed`). Files are
//! only written when a command succeeds. Exit codes: 0 ok, 2 configuration
//! error, 3 I/O error, 4 numerical failure.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fgmhd::classical::Method;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fgmhd", version, about = "Fractal synthesis, Hausdorff-dimension estimation and HD-guided generation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct GlobalArgs {
    /// Master seed; every random choice derives from it.
    #[arg(long, global = true, env = "FGMHD_SEED", default_value_t = 42)]
    seed: u64,
    /// Directory receiving CSV, SVG, PGM and weight files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for per-image estimation and per-slot sampling.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
}

/// Resolved global flags handed to the commands.
pub struct Global {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a canonical fractal or a labeled dataset.
    Synth(SynthArgs),
    /// Estimate the dimension of PGM images; prints CSV to stdout.
    Estimate(EstimateArgs),
    /// Compare estimators over a dataset manifest.
    Bench(BenchArgs),
    /// Train the convolutional HD regressor.
    TrainRegressor(TrainRegressorArgs),
    /// Train the toy cascade generator with a hybrid loss schedule.
    TrainToy(TrainToyArgs),
    /// Compare momentum-schedule settings on the toy task.
    SweepMmds(SweepArgs),
    /// HD-thresholded rejection sampling from a toy generator.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `dataset`, or a canonical kind: sierpinski, koch_curve, cantor_dust, filled_square, line.
    #[arg(long, default_value = "dataset")]
    pub kind: String,
    /// Image side in pixels (a power of two >= 64).
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Recursion depth for a canonical kind (default: log2 of the size).
    #[arg(long)]
    pub depth: Option<u32>,
    /// File name for a canonical kind (default: `<kind>.pgm`).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub canonical: usize,
    #[arg(long, default_value_t = 100)]
    pub ifs: usize,
    #[arg(long, default_value_t = 100)]
    pub cascade: usize,
    /// Chaos-game points per IFS image.
    #[arg(long, default_value_t = 300_000)]
    pub ifs_points: usize,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[arg(long, default_value = "box")]
    pub method: Method,
    /// Weight file, required for `--method regressor`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report failed images as NaN instead of aborting with exit code 4.
    #[arg(long)]
    pub skip_failures: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated subset of box,spectrum,perimeter,sandbox,regressor
    /// (default: the classical four, plus the regressor when --model is set).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "bench.csv")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct TrainRegressorArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Initial learning rate; annealed to zero on a cosine schedule.
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Branch kernel sizes.
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    pub kernels: Vec<usize>,
    #[arg(long, default_value = "regressor.weights")]
    pub weights: String,
    /// Also train every singleton kernel set and the full set; writes ablation.csv.
    #[arg(long)]
    pub ablation: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ToyArgs {
    /// Training epochs.
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Generated samples per HD-loss evaluation.
    #[arg(long, default_value_t = 16)]
    pub n_samples: usize,
    /// Number of Sierpinski reference rasters.
    #[arg(long, default_value_t = 40)]
    pub references: usize,
    /// Probability of blanking each occupied 4x4 block of a reference.
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Seed of the reference rasters, independent of --seed.
    #[arg(long, default_value_t = 7)]
    pub reference_seed: u64,
    /// Target dimension (default: log2 3).
    #[arg(long, default_value_t = 3f64.log2())]
    pub target: f64,
    /// Initial step size of the perturbation-gradient update for the HD term.
    #[arg(long, default_value_t = 20.0)]
    pub spsa_step: f64,
    /// Logit perturbation used by the two-point gradient estimate.
    #[arg(long, default_value_t = 0.5)]
    pub spsa_perturb: f64,
    /// Step decay exponent of the perturbation-gradient update.
    #[arg(long, default_value_t = 0.1)]
    pub spsa_decay: f64,
    /// Final weight of the exponential schedule (default: the final weight
    /// of an MMDS(0.9, 1.0) run with the same seed).
    #[arg(long)]
    pub lambda_final: Option<f64>,
    /// Curvature of the exponential schedule.
    #[arg(long, default_value_t = 5.0)]
    pub exp_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Mmds,
    Exp,
    None,
    /// MMDS and the calibrated exponential baseline on the same seed.
    Compare,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, value_enum, default_value_t = ScheduleArg::Mmds)]
    pub schedule: ScheduleArg,
    #[arg(long, default_value_t = 0.9)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[command(flatten)]
    pub toy: ToyArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub toy: ToyArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Generator parameters written by train-toy (default: train one now).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Single threshold: writes the kept samples.
    #[arg(long, conflicts_with = "taus")]
    pub tau: Option<f64>,
    /// Ascending thresholds: writes the sweep table.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Slots per threshold.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Regenerations allowed per slot before it is reported unfilled.
    #[arg(long, default_value_t = fgmhd::sampling::DEFAULT_MAX_RETRIES)]
    pub max_retries: usize,
    /// Score samples with a trained regressor instead of box counting.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also write each kept sample as a PGM (single threshold only).
    #[arg(long)]
    pub save_images: bool,
    #[command(flatten)]
    pub toy: ToyArgs,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = Global {
        seed: cli.global.seed,
        out_dir: cli.global.out_dir,
        threads: cli.global.threads as usize,
    };
    match &cli.command {
        Command::Synth(a) => commands::synth(&g, a),
        Command::Estimate(a) => commands::estimate(&g, a),
        Command::Bench(a) => commands::bench(&g, a),
        Command::TrainRegressor(a) => commands::train_regressor(&g, a),
        Command::TrainToy(a) => commands::train_toy(&g, a),
        Command::SweepMmds(a) => commands::sweep_mmds(&g, a),
        Command::Sample(a) => commands::sample(&g, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fgmhd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
