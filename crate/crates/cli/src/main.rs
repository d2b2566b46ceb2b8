//! `alw`: segment images, generate phantoms and compare window strategies.

mod commands;
mod config;
mod schema;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "alw", version, about = "Level-set lesion segmentation with adaptive local windows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one image from a long-axis seed.
    Segment(SegmentArgs),
    /// Write a synthetic phantom with its ground-truth mask.
    Phantom(PhantomArgs),
    /// Run several methods over a phantom suite.
    Compare(SuiteArgs),
    /// Repeat a comparison for several values of one setting.
    Sweep(SweepArgs),
}

/// Segmenter settings: defaults, then `--config`, then the flags below.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON file with segmenter settings (any subset of keys).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Energy model: local-pc, global-pc, ms or hs.
    #[arg(long)]
    pub model: Option<String>,
    /// Window strategy: adaptive, global or fixed:K.
    #[arg(long)]
    pub window: Option<String>,
    /// Setting override as key=value; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Input raster (binary PGM or PNG).
    #[arg(long, value_name = "FILE")]
    pub image: PathBuf,
    /// Long-axis end points as x1,y1,x2,y2.
    #[arg(long, allow_hyphen_values = true)]
    pub seed: String,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for mask.pgm and report.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// JSON phantom description; the flags below override it.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// disk, ellipse or blob.
    #[arg(long)]
    pub shape: Option<String>,
    /// Long-axis length in pixels.
    #[arg(long)]
    pub size: Option<f64>,
    #[arg(long)]
    pub contrast: Option<f64>,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long = "rng-seed")]
    pub rng_seed: Option<u64>,
    /// Any other phantom field as key=value; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory for image.pgm, mask.pgm and report.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SuiteArgs {
    /// Suite JSON; the bundled default suite when omitted.
    #[arg(long, value_name = "FILE")]
    pub suite: Option<PathBuf>,
    /// Comma-separated methods: alw, global-pc or flwK for a fixed K-pixel window.
    #[arg(long, default_value = "alw,flw11,flw15,global-pc")]
    pub methods: String,
    /// Perturbed seeds per case; overrides the suite's options.
    #[arg(long)]
    pub perturbations: Option<usize>,
    /// Seed for perturbations and bootstrap; overrides the suite's options.
    #[arg(long = "rng-seed")]
    pub rng_seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for report.json and dice.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Configuration key to vary.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values for the key.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub values: Vec<String>,
    #[command(flatten)]
    pub suite: SuiteArgs,
}

/// Why a command stopped; maps onto the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, unreadable or malformed input.
    Usage(String),
    /// The contour vanished.
    Numerical(String),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<alw_core::Error> for Failure {
    fn from(e: alw_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

/// Caps the worker pool at `ALW_THREADS` when set.
fn init_threads() -> Result<(), Failure> {
    let Some(raw) = std::env::var_os("ALW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n >= 1)
        .ok_or_else(|| Failure::usage(format!("ALW_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version go to stdout and succeed; anything else is a usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Segment(a) => commands::segment(&a),
        Command::Phantom(a) => commands::phantom(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Sweep(a) => commands::sweep(&a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("alw: {f}");
            ExitCode::from(f.code())
        }
    }
}
