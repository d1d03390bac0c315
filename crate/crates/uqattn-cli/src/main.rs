//! `uqattn` — command-line front end for the uncertainty-weighted
//! attention lab. Subcommands cover the full loop: generate a synthetic
//! task, train the toy encoder, run inference (deterministic, MC-dropout,
//! or uncertainty-modulated), decompose predictive variance by layer,
//! compute calibration/selective-prediction metrics, and drive multi-seed
//! experiments from a manifest.
//!
//! Exit codes: 0 success; 2 usage or configuration error; 3 I/O error;
//! 4 malformed input file; 5 numerical failure.

mod commands;
mod dataset;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uqattn::Error;

#[derive(Parser)]
#[command(name = "uqattn", version, about = "Uncertainty-weighted attention lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic classification task and write its four splits.
    Generate(GenerateArgs),
    /// Train the toy transformer encoder on a generated dataset.
    Train(TrainArgs),
    /// Run inference over a dataset split and dump per-example predictions.
    Infer(InferArgs),
    /// Estimate per-layer contributions to predictive variance for one example.
    Decompose(DecomposeArgs),
    /// Compute calibration and risk-coverage metrics from a prediction dump.
    Metrics(MetricsArgs),
    /// Run a multi-method, multi-seed experiment from a manifest file.
    Experiment(ExperimentArgs),
    /// Measure wall-clock inference latency across a grid of pass counts.
    BenchEfficiency(BenchEfficiencyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Task specification file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the dataset splits.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory produced by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Encoder architecture file (JSON); defaults to the toy profile sized
    /// from the dataset's task spec.
    #[arg(long)]
    encoder_config: Option<PathBuf>,
    /// Optimizer settings file (JSON); defaults are used when omitted.
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// Training seed (weight init, batch order, dropout masks).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the checkpoint and training log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum InferMode {
    /// Single deterministic pass, dropout off.
    Baseline,
    /// MC dropout without attention modulation (lambda pinned to 0).
    Mc,
    /// MC dropout with uncertainty-weighted attention.
    Uat,
}

#[derive(Args)]
struct InferArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset split file (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the prediction dump.
    #[arg(long)]
    out: PathBuf,
    /// Inference mode.
    #[arg(long, value_enum)]
    mode: InferMode,
    /// Attention modulation strength (uat mode only).
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of stochastic forward passes (mc and uat modes).
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Embedding dropout rate override.
    #[arg(long)]
    dropout_emb: Option<f64>,
    /// Attention dropout rate override.
    #[arg(long)]
    dropout_att: Option<f64>,
    /// Feed-forward dropout rate override.
    #[arg(long)]
    dropout_ffn: Option<f64>,
    /// Inference seed (dropout masks).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record each pass's logits in the dump, not just aggregates.
    #[arg(long)]
    include_per_pass: bool,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset split file (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Which example in the file to decompose (0-based).
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Outer sample groups (mask freezes) per layer.
    #[arg(long, default_value_t = 8)]
    outer: usize,
    /// Inner stochastic passes per outer group.
    #[arg(long, default_value_t = 64)]
    inner: usize,
    /// Decomposition seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding dropout rate override.
    #[arg(long)]
    dropout_emb: Option<f64>,
    /// Attention dropout rate override.
    #[arg(long)]
    dropout_att: Option<f64>,
    /// Feed-forward dropout rate override.
    #[arg(long)]
    dropout_ffn: Option<f64>,
    /// Output directory for the variance report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Prediction dump (JSONL) to evaluate.
    #[arg(long)]
    predictions: PathBuf,
    /// Optional shifted-distribution dump; adds shift metrics to the output.
    #[arg(long)]
    ood: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long)]
    out: PathBuf,
    /// Number of fixed-width calibration bins.
    #[arg(long, default_value_t = 15)]
    bins: usize,
    /// Confidence thresholds for coverage stats (comma-separated).
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.9, 0.8, 0.7])]
    thresholds: Vec<f64>,
    /// Fit a temperature on this validation dump and rescale all reports.
    #[arg(long)]
    fit_temperature: Option<PathBuf>,
    /// Merge predicted/true classes before scoring: class i becomes
    /// entry i of this comma-separated map (e.g. "0,1,1").
    #[arg(long, value_delimiter = ',')]
    collapse: Option<Vec<usize>>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment manifest file (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for datasets, checkpoints, reports, and tables.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for evaluation cells (outputs are identical for any value).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct BenchEfficiencyArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset split file (JSONL); the first example is timed.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for timing reports.
    #[arg(long)]
    out: PathBuf,
    /// Inference mode to time.
    #[arg(long, value_enum, default_value_t = InferMode::Uat)]
    mode: InferMode,
    /// Attention modulation strength (uat mode only).
    #[arg(long)]
    lambda: Option<f64>,
    /// Embedding dropout rate override.
    #[arg(long)]
    dropout_emb: Option<f64>,
    /// Attention dropout rate override.
    #[arg(long)]
    dropout_att: Option<f64>,
    /// Feed-forward dropout rate override.
    #[arg(long)]
    dropout_ffn: Option<f64>,
    /// Pass counts to time (comma-separated).
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 8])]
    samples_grid: Vec<usize>,
    /// Untimed warmup runs before measurement.
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    /// Timed runs per grid point.
    #[arg(long, default_value_t = 200)]
    timed: usize,
    /// Seed for the timed runs' dropout masks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 3,
        Error::Parse { .. } | Error::Format(_) => 4,
        Error::Diverged(_)
        | Error::ZeroTotalVariance
        | Error::NegativeUncertainty { .. }
        | Error::DegenerateLabels(_) => 5,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => commands::cmd_generate(&args),
        Command::Train(args) => commands::cmd_train(&args),
        Command::Infer(args) => commands::cmd_infer(&args),
        Command::Decompose(args) => commands::cmd_decompose(&args),
        Command::Metrics(args) => commands::cmd_metrics(&args),
        Command::Experiment(args) => commands::cmd_experiment(&args),
        Command::BenchEfficiency(args) => commands::cmd_bench_efficiency(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
