use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mossq_core::{Dist, E8m0Rounding, Fp8Format, Scheme};
use serde::Serialize;

pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Parser, Serialize)]
#[command(name = "mossq", version, about = "Software-emulated FP8 microscaling toolkit")]
pub struct Cli {
    /// Seed for all randomness; defaults to 0 and is printed when defaulted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output file. CSV and report commands write to stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// FP8 element format.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::E4m3)]
    pub format: FormatArg,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Dump all 256 codes of the selected format as CSV.
    CodecTable,
    /// Write a seeded random tensor file.
    Randn(RandnArgs),
    /// Quantize a tensor file into codes plus a metadata sidecar.
    Quantize(QuantizeArgs),
    /// Rebuild an f32 tensor from codes and their metadata sidecar.
    Dequantize(DequantizeArgs),
    /// Per-trial empirical and model SNR for the three schemes.
    Snr(SnrArgs),
    /// Check the Adam per-step update bound over random or adversarial gradients.
    BoundCheck(BoundCheckArgs),
    /// Predicted versus just-in-time weight scales over a synthetic AdamW run.
    Autoscale(AutoscaleArgs),
    /// Run or count a quantized GEMM and report errors and counters.
    Gemm(GemmArgs),
    /// Train the toy MLP with or without the FP8 forward path.
    Train(TrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    E4m3,
    E5m2,
}

impl From<FormatArg> for Fp8Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::E4m3 => Fp8Format::E4M3,
            FormatArg::E5m2 => Fp8Format::E5M2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeArg {
    Tensor,
    Group,
    Mx2,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Tensor => Scheme::Tensor,
            SchemeArg::Group => Scheme::Group,
            SchemeArg::Mx2 => Scheme::Mx2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundingArg {
    Ceil,
    Nearest,
}

impl From<RoundingArg> for E8m0Rounding {
    fn from(r: RoundingArg) -> Self {
        match r {
            RoundingArg::Ceil => E8m0Rounding::CeilPow2,
            RoundingArg::Nearest => E8m0Rounding::NearestLog2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistArg {
    Gaussian,
    Laplace,
    Outlier,
    Uniform,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DistOpts {
    #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
    pub dist: DistArg,
    /// Outlier probability per element (outlier distribution only).
    #[arg(long, default_value_t = 1e-3)]
    pub outlier_rate: f64,
    /// Outlier magnitude in units of the body's standard deviation.
    #[arg(long, default_value_t = 50.0)]
    pub outlier_magnitude: f64,
}

impl DistOpts {
    pub fn dist(&self) -> Dist {
        match self.dist {
            DistArg::Gaussian => Dist::Gaussian,
            DistArg::Laplace => Dist::Laplace,
            DistArg::Outlier => Dist::OutlierInjected { rate: self.outlier_rate, magnitude: self.outlier_magnitude },
            DistArg::Uniform => Dist::Uniform,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct RandnArgs {
    /// Comma-separated dimensions, e.g. 4,256.
    #[arg(long, value_delimiter = ',', required = true)]
    pub shape: Vec<usize>,
    #[command(flatten)]
    pub dist: DistOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct QuantizeArgs {
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    /// Input f32 tensor file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Metadata sidecar path; defaults to the output path with a .json extension.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub group_size: usize,
    /// Micro-scale rounding for the mx2 scheme.
    #[arg(long, value_enum, default_value_t = RoundingArg::Ceil)]
    pub rounding: RoundingArg,
    /// Level-1 span for the mx2 scheme; defaults to the whole last axis.
    #[arg(long)]
    pub k1: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct DequantizeArgs {
    /// Code tensor file written by `quantize`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Metadata sidecar written by `quantize`.
    #[arg(long)]
    pub meta: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SnrArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 4096)]
    pub size: usize,
    #[command(flatten)]
    pub dist: DistOpts,
    #[arg(long, default_value_t = 128)]
    pub group_size: usize,
    #[arg(long, value_enum, default_value_t = RoundingArg::Ceil)]
    pub rounding: RoundingArg,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundCheckArgs {
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Use the sparse-spike family (trial i spikes at step i mod steps + 1).
    #[arg(long)]
    pub adversarial: bool,
    /// Elements per gradient sequence.
    #[arg(long, default_value_t = 1)]
    pub elements: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.95)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-30)]
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaScheduleArg {
    Const,
    Cosine,
}

#[derive(Debug, Args, Serialize)]
pub struct AutoscaleArgs {
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 500)]
    pub interval: u64,
    #[arg(long, value_enum, default_value_t = EtaScheduleArg::Cosine)]
    pub eta_schedule: EtaScheduleArg,
    /// Constant or peak learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub eta: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup: u64,
    #[arg(long, default_value_t = 1024)]
    pub elements: usize,
    #[arg(long, default_value_t = 0.1)]
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GemmSchemeArg {
    Mx2,
    Pergroup,
}

#[derive(Debug, Args, Serialize)]
pub struct GemmArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = GemmSchemeArg::Mx2)]
    pub scheme: GemmSchemeArg,
    /// Run the kernel on seeded data and compare against the f64 oracle.
    /// Without it only operation counts are reported.
    #[arg(long)]
    pub verify: bool,
    /// Also print the counters to stderr.
    #[arg(long)]
    pub counters: bool,
    #[arg(long, default_value_t = 128)]
    pub group_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub quant: OnOff,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 500)]
    pub interval: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub peak_lr: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup: u64,
    #[arg(long, default_value_t = 0.1)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub d_out: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CodecTable => "codec-table",
            Command::Randn(_) => "randn",
            Command::Quantize(_) => "quantize",
            Command::Dequantize(_) => "dequantize",
            Command::Snr(_) => "snr",
            Command::BoundCheck(_) => "bound-check",
            Command::Autoscale(_) => "autoscale",
            Command::Gemm(_) => "gemm",
            Command::Train(_) => "train",
        }
    }
}
