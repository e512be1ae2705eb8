mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ude_core::data::GeneratorKind;
use ude_core::topology::{CloudAxis, TokenDistance};

#[derive(Debug, Parser)]
#[command(name = "ude", version, about = "Delay-embedding patch transformer for time-series forecasting")]
pub struct Cli {
    /// Seed for every stochastic step (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic series to CSV.
    Generate(GenerateArgs),
    /// Cut one channel into Hankel patches, one CSV per patch plus a manifest.
    Embed(EmbedArgs),
    /// Train a new model (or continue one) on one or more CSV files.
    Train(TrainArgs),
    /// Train only the forecast head of a checkpoint on a target CSV.
    Finetune(FinetuneArgs),
    /// Forecast the horizon after the last lookback window of every channel.
    Forecast(ForecastArgs),
    /// Per-channel MSE and MAE over the test split.
    Evaluate(EvaluateArgs),
    /// Persistence diagrams, token distances and clusters for one window.
    Tda(TdaArgs),
    /// Least-squares linear operator on a latent trajectory and its spectrum.
    Koopman(KoopmanArgs),
    /// High-attention tokens of one window.
    Attn(AttnArgs),
    /// Blend per-channel forecasts by mutual information.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Periodic,
    RandomWalk,
    Lorenz,
    SparsePulse,
}

impl From<KindArg> for GeneratorKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Periodic => GeneratorKind::Periodic,
            KindArg::RandomWalk => GeneratorKind::RandomWalk,
            KindArg::Lorenz => GeneratorKind::Lorenz,
            KindArg::SparsePulse => GeneratorKind::SparsePulse,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DistanceArg {
    H1,
    Twwd,
}

impl From<DistanceArg> for TokenDistance {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::H1 => TokenDistance::H1,
            DistanceArg::Twwd => TokenDistance::Twwd,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    Columns,
    Rows,
}

impl From<AxisArg> for CloudAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Columns => CloudAxis::Columns,
            AxisArg::Rows => CloudAxis::Rows,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NanArg {
    Reject,
    ForwardFill,
    DropRow,
}

/// Options shared by every command that reads a CSV series.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input CSV (header row of channel names, one column per channel).
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    /// How to treat empty or NaN cells.
    #[arg(long, value_enum, default_value = "reject")]
    pub nan_policy: NanArg,

    /// Ignore the first column (timestamps or an index).
    #[arg(long)]
    pub skip_first_column: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,

    /// Number of samples.
    #[arg(long, default_value_t = 5000)]
    pub length: usize,

    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Channel name or 0-based index.
    #[arg(long)]
    pub channel: String,

    /// Embedding dimension (config `delay.m` when omitted).
    #[arg(long)]
    pub m: Option<usize>,

    /// Delay step (config `delay.tau` when omitted).
    #[arg(long)]
    pub tau: Option<usize>,

    /// Patch rows (config `delay.p` when omitted).
    #[arg(long)]
    pub p: Option<usize>,

    /// Patch columns (config `delay.q` when omitted).
    #[arg(long)]
    pub q: Option<usize>,

    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Training overrides on top of the config file.
#[derive(Debug, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Step between training windows.
    #[arg(long)]
    pub window_stride: Option<usize>,

    /// Training-report CSV (one row per epoch).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,

    /// Human-readable summary file (printed to stdout when omitted).
    #[arg(long, value_name = "PATH")]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training CSV; repeat for a multi-domain corpus.
    #[arg(long = "in", value_name = "PATH", required = true)]
    pub inputs: Vec<PathBuf>,

    /// Checkpoint to continue from instead of a fresh model.
    #[arg(long, value_name = "PATH")]
    pub init: Option<PathBuf>,

    /// Use the pretraining learning rate 1e-4 instead of 1e-3.
    #[arg(long)]
    pub low_lr: bool,

    #[command(flatten)]
    pub train: TrainOverrides,

    /// Output checkpoint.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Pretrained checkpoint.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,

    #[command(flatten)]
    pub input: InputArgs,

    /// Fraction of training windows used (0 keeps the model unchanged).
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,

    #[command(flatten)]
    pub train: TrainOverrides,

    /// Output checkpoint.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,

    #[command(flatten)]
    pub input: InputArgs,

    /// Blend the target channel with its top-k neighbours:
    /// `--aggregate target=<name> topk=<k>`.
    #[arg(long, num_args = 1..=2, value_name = "KEY=VALUE")]
    pub aggregate: Option<Vec<String>>,

    /// Forecast CSV, one column per channel, in the input's units.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,

    #[command(flatten)]
    pub input: InputArgs,

    /// Expected forecast horizon; must match the checkpoint.
    #[arg(long)]
    pub horizon: Option<usize>,

    /// Step between test windows.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,

    /// Metrics CSV (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TdaArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Channel name or 0-based index.
    #[arg(long)]
    pub channel: String,

    /// First sample of the window (default: the last `window.lookback` samples).
    #[arg(long)]
    pub start: Option<usize>,

    /// Distance between patch diagrams.
    #[arg(long, value_enum, default_value = "h1")]
    pub distance: DistanceArg,

    /// Which patch vectors form the point cloud.
    #[arg(long, value_enum, default_value = "columns")]
    pub axis: AxisArg,

    /// Number of average-linkage clusters.
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,

    /// Output directory for diagrams.csv, distances.csv and clusters.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KoopmanArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,

    #[command(flatten)]
    pub input: InputArgs,

    /// Channel name or 0-based index.
    #[arg(long)]
    pub channel: String,

    /// Step between successive windows of the trajectory.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,

    /// Fit `z(t+lag) ≈ K·z(t)`.
    #[arg(long, default_value_t = 1)]
    pub lag: usize,

    /// Output directory for trajectory.csv, operator.csv and spectrum.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,

    #[command(flatten)]
    pub input: InputArgs,

    /// Channel name or 0-based index.
    #[arg(long)]
    pub channel: String,

    /// First sample of the window (default: the last lookback window).
    #[arg(long)]
    pub start: Option<usize>,

    /// Per-token flag histogram CSV.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// History used to rank neighbours and align scales.
    #[command(flatten)]
    pub input: InputArgs,

    /// Forecast CSV with the same channel columns as the input.
    #[arg(long, value_name = "PATH")]
    pub forecasts: PathBuf,

    /// Target channel name or 0-based index.
    #[arg(long)]
    pub target: String,

    /// Neighbours blended in (weights 0.9 self, 0.1/k each).
    #[arg(long)]
    pub topk: Option<usize>,

    /// Blended forecast CSV.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|info| {
        let msg = info.to_string().replace('\n', " ");
        eprintln!("error: kind=internal msg={msg}");
    }));
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={first}");
            for line in rendered.lines().skip(1).filter(|l| !l.trim().is_empty()) {
                eprintln!("{line}");
            }
            return ExitCode::from(1);
        }
    };
    match std::panic::catch_unwind(|| commands::run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::from(if e.is_internal() { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(2),
    }
}
