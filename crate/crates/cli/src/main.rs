//! `timing`: generate data, train, evaluate and sweep next-action time models.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use timing_core::nets::{Ablation, HeadKind, ModelKind};

#[derive(Debug, Parser)]
#[command(name = "timing", version, about = "Next-action time-bin prediction for smart-home interaction logs")]
struct Cli {
    /// Root for default output directories.
    #[arg(long, global = true, env = "TIMING_OUT_DIR", default_value = "runs")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for generation, model initialisation and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: <out-root>/<subcommand>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Budget {
    /// Maximum training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    patience: Option<usize>,
    /// Wall-clock limit per training run in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a routine-driven dataset plus analysis tables.
    Generate(GenerateArgs),
    /// Train a model and report test metrics of the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint without training.
    Eval(EvalArgs),
    /// Run one of the analysis sweeps.
    Sweep(SweepArgs),
    /// Train the full model and its ablations (same as `sweep ablation`).
    Ablate(SweepOpts),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Number of users.
    #[arg(long)]
    users: Option<u32>,
    /// Number of sessions to emit.
    #[arg(long)]
    sessions: Option<usize>,
    /// Routine bank: `default`, `synth`, `none`, or a JSON file.
    #[arg(long)]
    routines: Option<String>,
    /// Also write the SmartSense-style conversion.
    #[arg(long)]
    smartsense: bool,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: timing_core::nets::UnknownName| e.to_string())
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: timing_core::nets::UnknownName| e.to_string())
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    s.parse().map_err(|e: timing_core::nets::UnknownName| e.to_string())
}

#[derive(Debug, Args)]
struct ModelFlags {
    /// Model name: timing-matters, mlp, mlp-2step, lstm, mlp-lstm, lstm-2step, transformer.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// Timing-matters variant: full, minus-rbf, minus-time-encoder, minus-sequence-encoder.
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Output head: classification or regression.
    #[arg(long, value_parser = parse_head)]
    head: Option<HeadKind>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    /// Number of time bins.
    #[arg(long)]
    bins: Option<usize>,
    /// Input actions per session; sessions are rebuilt from the user streams.
    #[arg(long)]
    window: Option<usize>,
    /// Transformer layers.
    #[arg(long)]
    layers: Option<usize>,
    #[command(flatten)]
    budget: Budget,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Bin counts to report precision at [default: 96 and 8 where available].
    #[arg(long, value_delimiter = ',')]
    bins: Vec<usize>,
    /// Evaluate every session instead of the checkpoint's test partition.
    #[arg(long)]
    all: bool,
    /// Measure RMSE around the clock instead of linearly.
    #[arg(long)]
    circular: bool,
    /// Output directory [default: <out-root>/eval].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepKind {
    /// Context window sizes times transformer layer counts.
    Context,
    /// Number of time bins.
    Bins,
    /// Regression against classification head.
    Regcls,
    /// Full model and its ablations.
    Ablation,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(value_enum)]
    kind: SweepKind,
    #[command(flatten)]
    opts: SweepOpts,
}

#[derive(Debug, Args)]
struct SweepOpts {
    #[command(flatten)]
    common: Common,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Base model name.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// Bin counts for the bins sweep [default: 8,12,24,48,96,288].
    #[arg(long, value_delimiter = ',')]
    bins: Vec<usize>,
    /// Windows for the context sweep [default: 5,10,20,50,100,200].
    #[arg(long, value_delimiter = ',')]
    window: Vec<usize>,
    /// Layer counts for the context sweep [default: 2,4].
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    #[command(flatten)]
    budget: Budget,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&cli.out_root, a),
        Command::Train(a) => commands::train(&cli.out_root, a),
        Command::Eval(a) => commands::eval(&cli.out_root, a),
        Command::Sweep(a) => commands::sweep(&cli.out_root, a.kind, a.opts),
        Command::Ablate(a) => commands::sweep(&cli.out_root, SweepKind::Ablation, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
