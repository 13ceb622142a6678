//! `sdnn`: generate, quantize, convert, run and profile sigma-delta networks.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "sdnn",
    version,
    about = "Sigma-delta graded-spike conversion toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic quantized model and a video.
    Gen(GenArgs),
    /// Quantize a float model with min-max calibration.
    Quantize(QuantizeArgs),
    /// Convert a quantized model into a graded-spike graph.
    Convert(ConvertArgs),
    /// Run the dense reference on every frame.
    RunRef(RunRefArgs),
    /// Run a converted graph on a video, event by event.
    RunSdnn(RunSdnnArgs),
    /// Check a graph's outputs against the dense fixed-point reference.
    Compare(CompareArgs),
    /// Sweep thresholds over the first N layers and report sparsity and cost.
    Sweep(SweepArgs),
    /// Decode grid outputs into bounding boxes (CSV).
    Decode(DecodeArgs),
    /// Summarize sparsity and estimated cost of one run.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input and layer shapes, e.g. `3x32x32:8k3s2p1,16k3s1p1,27k1s1p0`.
    #[arg(long, default_value = "3x32x32:8k3s2p1,16k3s1p1,16k3s1p1,27k1s1p0")]
    pub spec: String,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, value_enum, default_value_t = VideoArg::Blob)]
    pub video_kind: VideoArg,
    /// Blob motion in pixels per frame.
    #[arg(long, default_value_t = 1.0)]
    pub motion_rate: f64,
    #[arg(long, default_value_t = 6)]
    pub blob_size: usize,
    /// Quantized model output (`.sdm`).
    #[arg(long)]
    pub model: PathBuf,
    /// Video output (`.sdt`).
    #[arg(long)]
    pub video: PathBuf,
    /// Optional float model output (`.sdf`).
    #[arg(long)]
    pub float_model: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VideoArg {
    Blob,
    Random,
}

#[derive(Args, Debug)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub float_model: PathBuf,
    /// Calibration frames (`.sdt`).
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated thresholds: one per layer, or encoder first then one per layer.
    #[arg(long, value_delimiter = ',', conflicts_with = "first_n")]
    pub thresholds: Option<Vec<u32>>,
    /// Threshold 1 on the encoder and the first N-1 layers.
    #[arg(long)]
    pub first_n: Option<usize>,
    #[arg(long)]
    pub acc_bits: Option<u32>,
    #[arg(long)]
    pub payload_bits: Option<u32>,
    #[arg(long)]
    pub product_bits: Option<u32>,
    /// Round to nearest in the requantizer shift.
    #[arg(long)]
    pub round_shift: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunRefArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Fixed)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Float,
    Fixed,
}

#[derive(Args, Debug)]
pub struct RunSdnnArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub video: PathBuf,
    /// Dequantized, latency-aligned outputs (`.sdt`).
    #[arg(long)]
    pub out: PathBuf,
    /// Spike trace output (`.sst`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Per-timestep counters as CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Step layers concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub video: PathBuf,
    /// Inclusive range `A..B`, or a single value.
    #[arg(long, default_value = "0..")]
    pub n: String,
    #[arg(long, value_enum, default_value_t = MetricArg::Deviation)]
    pub metric: MetricArg,
    #[arg(long)]
    pub energy_config: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub output_format: FormatArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Deviation,
    Detection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    StructuredText,
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    #[arg(long, default_value_t = 3)]
    pub boxes_per_cell: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.5)]
    pub conf: f64,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Output tensors (`.sdt`) from `run-ref` or `run-sdnn`.
    #[arg(long)]
    pub outputs: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub energy_config: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub parallel: bool,
}

/// Bad flag values or combinations detected after parsing (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SDNN_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
