//! Command-line driver: simulation runs, calibration, closed-loop runs and
//! analysis of real image corpora.
//!
//! Exit codes are part of the interface:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage, configuration or parameter error |
//! | 3 | I/O error |
//! | 4 | image size differs from the reference |
//! | 5 | calibration targets are not monotone |

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    SizeMismatch(String),

    #[error("{0}")]
    NonMonotoneTargets(String),

    #[error(transparent)]
    Library(#[from] biowipe::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::SizeMismatch(_) => 4,
            CliError::NonMonotoneTargets(_) => 5,
            CliError::Library(e) => match e.root() {
                biowipe::Error::Io(_) => 3,
                _ => 2,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "biowipe",
    version,
    about = "Anti-biofouling wiper digital twin and fouling analyzer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// TOML run configuration; built-in defaults when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the master random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress progress output
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the control/treated experiment and write report, plot data and frames
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Binarize a corpus of PGM/PPM frames and score them against the Day-0 reference
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// CSV manifest with columns day,arm,path
        #[arg(long)]
        manifest: PathBuf,
        /// Output report CSV
        #[arg(long)]
        out: PathBuf,
        /// Threshold sensitivity in [0, 1]
        #[arg(long)]
        sensitivity: Option<f64>,
        /// Foreground polarity: dark or bright
        #[arg(long)]
        polarity: Option<String>,
        /// Odd side of the averaging window in pixels
        #[arg(long)]
        window: Option<usize>,
    },
    /// Fit growth rates to a target control trajectory
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        /// CSV with columns day,mse
        #[arg(long)]
        targets: PathBuf,
        /// Output TOML holding the fitted [growth] block
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the image-triggered cleaning controller day by day
    ClosedLoop {
        #[command(flatten)]
        common: CommonArgs,
        /// Output timeline CSV
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
