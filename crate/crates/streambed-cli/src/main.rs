//! `streambed` — command-line driver for the streaming quantile estimation
//! and feature-embedding library.
//!
//! Every subcommand writes CSV tables plus a `*.meta.json` sidecar into the
//! output directory (`--out`, else `$STREAMBED_OUT`, else `./streambed-out`)
//! and is byte-for-byte reproducible given the same arguments and seed list.

mod commands;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use streambed::model::{EncoderKind, ModelError, OptimizerKind};
use streambed::modulation::ModulationKind;
use streambed::quantile::CodecError;
use streambed::reservoir::ReservoirError;
use streambed::streamlab::stats::StatsError;
use streambed::streamlab::StreamError;
use streambed::SamplingMode;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("stream: {0}")]
    Stream(#[from] StreamError),
    #[error("stats: {0}")]
    Stats(#[from] StatsError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("reservoir: {0}")]
    Reservoir(#[from] ReservoirError),
    #[error("encoding: {0}")]
    Codec(#[from] CodecError),
    #[error("{0}")]
    Usage(String),
}

/// Comma-separated `u64` list, e.g. `--seeds 1,2,3`.
#[derive(Debug, Clone)]
pub struct SeedList(pub Vec<u64>);

/// Comma-separated `f64` list, e.g. `--levels 0.1,0.5,0.9`.
#[derive(Debug, Clone)]
pub struct F64List(pub Vec<f64>);

fn parse_u64_list(text: &str) -> Result<SeedList, String> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(
            part.parse::<u64>()
                .map_err(|e| format!("bad seed `{part}`: {e}"))?,
        );
    }
    if out.is_empty() {
        return Err("need at least one seed".into());
    }
    Ok(SeedList(out))
}

fn parse_f64_list(text: &str) -> Result<F64List, String> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let x = part
            .parse::<f64>()
            .map_err(|e| format!("bad number `{part}`: {e}"))?;
        if !x.is_finite() {
            return Err(format!("bad number `{part}`: must be finite"));
        }
        out.push(x);
    }
    if out.is_empty() {
        return Err("need at least one value".into());
    }
    Ok(F64List(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Per-element acceptance test.
    Standard,
    /// Closed-form skip sampling between reservoir writes.
    Jump,
}

impl ModeArg {
    pub fn to_lib(self) -> SamplingMode {
        match self {
            ModeArg::Standard => SamplingMode::Standard,
            ModeArg::Jump => SamplingMode::Jump,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModeArg::Standard => "standard",
            ModeArg::Jump => "jump",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    /// Thermometer code over quantile bins.
    Quantile,
    /// Boundary-distance baseline in value space.
    Value,
    /// Raw scalar times a learned direction.
    Raw,
}

impl EncoderArg {
    pub fn to_lib(self) -> EncoderKind {
        match self {
            EncoderArg::Quantile => EncoderKind::QuantileThermometer,
            EncoderArg::Value => EncoderKind::ValueSpace,
            EncoderArg::Raw => EncoderKind::RawScalar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModulationArg {
    /// No conditioning; numeric embeddings ignore the categorical context.
    None,
    /// Learned scale and shift per category.
    Affine,
    /// Learned sigmoid gate per category.
    Gating,
}

impl ModulationArg {
    pub fn to_lib(self) -> ModulationKind {
        match self {
            ModulationArg::None => ModulationKind::None,
            ModulationArg::Affine => ModulationKind::Affine,
            ModulationArg::Gating => ModulationKind::Gating,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

impl OptimizerArg {
    pub fn to_lib(self) -> OptimizerKind {
        match self {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Args, Clone)]
pub struct IoArgs {
    /// Output directory (defaults to $STREAMBED_OUT, then ./streambed-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated run seeds; one run per seed.
    #[arg(long, default_value = "7", value_parser = parse_u64_list)]
    pub seeds: SeedList,
}

/// Model settings shared by `train` and `sweep-beta`. Precedence: defaults,
/// then the `--config` file, then these flags.
#[derive(Args, Clone)]
pub struct ModelArgs {
    /// JSON file with model settings; explicit flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding dimension per field.
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Quantile bins per numeric field.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Reservoir capacity per numeric field.
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Reservoir sampling schedule.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Modulation mixing coefficient in [0, 1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Conditioning mechanism for numeric embeddings.
    #[arg(long, value_enum)]
    pub modulation: Option<ModulationArg>,
    /// Numeric feature encoder.
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    /// Comma-separated hidden layer widths, e.g. `16,8`; empty for none.
    #[arg(long)]
    pub hidden: Option<String>,
    /// Optimizer step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// L2 regularization strength.
    #[arg(long)]
    pub l2: Option<f64>,
    /// Samples per gradient step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Parameter update rule.
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
}

#[derive(Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Stream-spec JSON file (defaults to the clustered integer preset).
    #[arg(long)]
    pub stream: Option<PathBuf>,
    /// Stream length to generate.
    #[arg(long, default_value_t = 200_000)]
    pub len: usize,
    /// Reservoir capacity.
    #[arg(long, default_value_t = 10_000)]
    pub capacity: usize,
    /// Reservoir sampling schedule.
    #[arg(long, value_enum, default_value_t = ModeArg::Jump)]
    pub mode: ModeArg,
    /// Comma-separated quantile levels in (0, 1).
    #[arg(
        long,
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
        value_parser = parse_f64_list
    )]
    pub levels: F64List,
}

#[derive(Args)]
pub struct BiasArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Comma-separated quantile levels in (0, 1).
    #[arg(long, default_value = "0.1,0.25,0.5,0.75,0.9", value_parser = parse_f64_list)]
    pub levels: F64List,
    /// Batches in the drifting stream (one window each).
    #[arg(long, default_value_t = 10)]
    pub batches: usize,
    /// Samples per batch.
    #[arg(long, default_value_t = 20_000)]
    pub batch_size: usize,
    /// Lower edge of the drifting uniform range.
    #[arg(long, default_value_t = 0.0)]
    pub lo: f64,
    /// Upper edge of the drifting uniform range.
    #[arg(long, default_value_t = 1.0)]
    pub hi: f64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Labeled stream-spec JSON file (defaults to a two-category demo).
    #[arg(long, conflicts_with = "data")]
    pub stream: Option<PathBuf>,
    /// CSV of samples to train on instead of a generated stream.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Samples to generate when streaming from a spec.
    #[arg(long, default_value_t = 30_000, conflicts_with = "data")]
    pub len: usize,
    /// Fraction of samples held out for evaluation, in (0, 1).
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Gradient steps between trajectory evaluations.
    #[arg(long, default_value_t = 20)]
    pub eval_every: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args)]
pub struct SweepBetaArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Labeled stream-spec JSON file (defaults to a two-category demo).
    #[arg(long, conflicts_with = "data")]
    pub stream: Option<PathBuf>,
    /// CSV of samples to train on instead of a generated stream.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Samples to generate when streaming from a spec.
    #[arg(long, default_value_t = 20_000, conflicts_with = "data")]
    pub len: usize,
    /// Fraction of samples held out for evaluation, in (0, 1).
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Comma-separated modulation strengths to sweep.
    #[arg(long, default_value = "0.0,0.25,0.5,0.75,1.0", value_parser = parse_f64_list)]
    pub betas: F64List,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args)]
pub struct DriftArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Stream-spec JSON file (defaults to a periodic-shift preset).
    #[arg(long)]
    pub stream: Option<PathBuf>,
    /// Stream length to generate.
    #[arg(long, default_value_t = 100_000)]
    pub len: usize,
    /// Segments to score against the first one.
    #[arg(long, default_value_t = 20)]
    pub segments: usize,
    /// Histogram cells for the stability index.
    #[arg(long, default_value_t = 10)]
    pub cells: usize,
}

#[derive(Args)]
pub struct EncodeDemoArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Stream-spec JSON file (defaults to the clustered integer preset).
    #[arg(long)]
    pub stream: Option<PathBuf>,
    /// Stream length to generate.
    #[arg(long, default_value_t = 100_000)]
    pub len: usize,
    /// Reservoir capacity.
    #[arg(long, default_value_t = 10_000)]
    pub capacity: usize,
    /// Quantile bins in the encoding table.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Reservoir sampling schedule.
    #[arg(long, value_enum, default_value_t = ModeArg::Jump)]
    pub mode: ModeArg,
    /// Comma-separated probe values (defaults to the stream's true deciles).
    #[arg(long, value_parser = parse_f64_list)]
    pub probes: Option<F64List>,
}

#[derive(Parser)]
#[command(
    name = "streambed",
    version,
    about = "Streaming quantile estimation and distribution-aware feature embeddings",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate stream quantiles with a sampling reservoir.
    Estimate(EstimateArgs),
    /// Measure order-statistics estimator bias on a drifting stream.
    Bias(BiasArgs),
    /// Train the embedding model on a labeled stream.
    Train(TrainArgs),
    /// Train across a grid of modulation strengths.
    SweepBeta(SweepBetaArgs),
    /// Score distribution drift segment by segment.
    Drift(DriftArgs),
    /// Show how values map to quantile bins and thermometer codes.
    EncodeDemo(EncodeDemoArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate(args) => commands::estimate(args),
        Command::Bias(args) => commands::bias(args),
        Command::Train(args) => commands::train(args),
        Command::SweepBeta(args) => commands::sweep_beta(args),
        Command::Drift(args) => commands::drift(args),
        Command::EncodeDemo(args) => commands::encode_demo(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
