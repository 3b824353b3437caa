//! The `denseed` command-line driver: `audit`, `synth`, `train`, `eval` and
//! `profile`.
//!
//! Exit codes: 0 success, 1 audit mismatch, 2 user or configuration error,
//! 3 numeric failure.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("audit mismatch")]
    AuditMismatch,
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::AuditMismatch => 1,
            CliError::Numeric(_) => 3,
            _ => 2,
        }
    }
}

impl From<denseed::dataset::DatasetError> for CliError {
    fn from(e: denseed::dataset::DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<denseed::synth::SynthError> for CliError {
    fn from(e: denseed::synth::SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<denseed::arch::ArchError> for CliError {
    fn from(e: denseed::arch::ArchError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<denseed::exec::ExecError> for CliError {
    fn from(e: denseed::exec::ExecError) -> Self {
        match e {
            denseed::exec::ExecError::NumericOverflow { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<denseed::train::TrainError> for CliError {
    fn from(e: denseed::train::TrainError) -> Self {
        use denseed::train::TrainError as T;
        match e {
            T::Diverged { .. } | T::NonFiniteGradient { .. } => CliError::Numeric(e.to_string()),
            T::Exec(inner) => inner.into(),
            T::Io(m) => CliError::Io(m),
            T::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<denseed::eval::EvalError> for CliError {
    fn from(e: denseed::eval::EvalError) -> Self {
        use denseed::eval::EvalError as E;
        match e {
            E::Exec(inner) => inner.into(),
            E::Io(m) => CliError::Io(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "denseed", version, about = "Dense encoder-decoder image restoration: audit, synthesize, train, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter, conv-layer and feature-map audit of architectures.
    Audit(AuditArgs),
    /// Generate a synthetic dataset with known emitter positions.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out FOVs and export artifacts.
    Eval(EvalArgs),
    /// Extract a line profile from an image.
    Profile(ProfileArgs),
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Audit every row of the built-in comparison table.
    #[arg(long)]
    pub builtin: bool,
    /// Inline model config, e.g. "blocks=2,2,2" or "model=dncnn depth=17".
    #[arg(long = "config")]
    pub configs: Vec<String>,
    /// Also write the CSV here; a run manifest is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `default` (8 FOVs x 50 frames, dense phantoms) or `benchmark`
    /// (16 FOVs x 10 frames, sparse near-limit pairs).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub fovs: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Square frame side in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub fwhm_wide: Option<f64>,
    #[arg(long)]
    pub fwhm_narrow: Option<f64>,
    #[arg(long)]
    pub poisson_scale: Option<f64>,
    #[arg(long)]
    pub read_noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Inline model config, e.g. "blocks=3,6,3 initial=16 growth=8".
    #[arg(long)]
    pub model: Option<String>,
    /// Train on the first N FOVs (sorted by id); the rest are held out.
    #[arg(long)]
    pub train_fovs: Option<usize>,
    /// Explicit comma-separated training FOV ids.
    #[arg(long)]
    pub train_ids: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Expected frames per FOV.
    #[arg(long)]
    pub frames: Option<usize>,
    /// f32 or f64.
    #[arg(long)]
    pub dtype: Option<String>,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated held-out FOV ids; defaults to the training run's split.
    #[arg(long)]
    pub test_fovs: Option<String>,
    /// Profile segment "x0,y0,x1,y1"; repeatable.
    #[arg(long = "profile")]
    pub profiles: Vec<String>,
    #[arg(long, default_value_t = 101)]
    pub samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub um_per_px: f64,
    #[arg(long, default_value_t = denseed::eval::DEFAULT_DIP_THRESHOLD)]
    pub dip_threshold: f64,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Grayscale TIFF.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub page: usize,
    /// Start point "x,y" (column, row).
    #[arg(long)]
    pub from: String,
    /// End point "x,y".
    #[arg(long)]
    pub to: String,
    /// Defaults to one sample per pixel of segment length.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub um_per_px: f64,
    #[arg(long, default_value_t = denseed::eval::DEFAULT_DIP_THRESHOLD)]
    pub dip_threshold: f64,
    /// CSV output; a PNG plot and run manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the subcommand and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Audit(a) => commands::audit(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Profile(a) => commands::profile(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            if !matches!(e, CliError::AuditMismatch) {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}
