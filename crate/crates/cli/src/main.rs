use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use config::ConfigFile;
use error::CliError;

/// Crop-type classification of field-level NDVI time series.
#[derive(Parser, Debug)]
#[command(name = "cropknn", version)]
pub struct Cli {
    /// key = value configuration file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master random seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Dump per-stage preprocessing tables under <out>/debug
    #[arg(long, global = true)]
    pub debug_dump: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extract gap-filled per-field band series from a grid bundle
    Preprocess(PreprocessArgs),
    /// Per-class mean/std time series for bands and indices
    Bands(BandsArgs),
    /// Run the balanced-class cross-validation suite
    Experiment(ExperimentArgs),
    /// Write a synthetic grid bundle
    Synth(SynthArgs),
    /// Classify query fields against a labeled reference set
    Predict(PredictArgs),
}

#[derive(Args, Debug, Default)]
pub struct PreprocessFlags {
    /// Grid bundle directory
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Pixels with cloud probability above this are masked
    #[arg(long)]
    pub cloud_threshold: Option<f64>,
    #[arg(long)]
    pub pct_low: Option<f64>,
    #[arg(long)]
    pub pct_high: Option<f64>,
    /// Savitzky–Golay window (odd)
    #[arg(long)]
    pub sg_window: Option<usize>,
    #[arg(long)]
    pub sg_polyorder: Option<usize>,
    #[arg(long)]
    pub min_valid_pixels: Option<usize>,
    /// field | region
    #[arg(long)]
    pub percentile_scope: Option<String>,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub pre: PreprocessFlags,
}

#[derive(Args, Debug)]
pub struct BandsArgs {
    #[command(flatten)]
    pub pre: PreprocessFlags,
    /// Series artifact from `preprocess`, instead of a bundle
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Comma-separated indices and bands, e.g. ndvi,gcvi,B08
    #[arg(long)]
    pub indices: Option<String>,
    /// Comma-separated class names (default: the pure-crop classes present)
    #[arg(long)]
    pub classes: Option<String>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub pre: PreprocessFlags,
    /// Series artifact from `preprocess`, instead of a bundle
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Feature index: ndvi, gcvi or a band name
    #[arg(long)]
    pub index: Option<String>,
    /// Largest experiment size: runs experiments with 2..=N classes
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma-separated odd k values
    #[arg(long)]
    pub k_candidates: Option<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Comma-separated class=count pairs, e.g. maize=100,cassava=100
    #[arg(long)]
    pub counts: Option<String>,
    /// Use the Kenya field survey's class counts (1462/829/487/172/160/98/78)
    #[arg(long)]
    pub survey_profile: bool,
    #[arg(long)]
    pub field_size: Option<usize>,
    #[arg(long)]
    pub dates: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub cloud_fraction: Option<f64>,
    /// Give every class the same phenology curve
    #[arg(long)]
    pub identical_curves: bool,
    #[arg(long)]
    pub region_id: Option<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Labeled reference series artifact
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Query series artifact
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub index: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let threads = cfg.pick(cli.threads, "threads")?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    commands::dispatch(&cli, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cropknn: {}: {e}", e.kind());
            e.exit_code()
        }
    }
}
