//! Experiment runner: theory curves, simulated click streams, their
//! analysis and effective-state reconstruction, driven by JSON experiment
//! files or built-in presets.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod presets;
pub mod spec;

pub use spec::{ExperimentKind, ExperimentSpec, Overrides};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_STATISTICS: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: frqmc::Error,
    },

    #[error(transparent)]
    Core(#[from] frqmc::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Run { source, .. } | CliError::Core(source) => core_exit_code(source),
        }
    }
}

fn core_exit_code(e: &frqmc::Error) -> i32 {
    use frqmc::Error::*;
    match e {
        EmptyStream | TooFewClicks { .. } => EXIT_STATISTICS,
        NonFinite(_)
        | NonUniqueSteadyState { .. }
        | UndefinedCorrelation { .. }
        | EpsilonTooLarge { .. }
        | TimestepTooLarge { .. }
        | TruncationTooSmall { .. }
        | InconsistentMoments { .. } => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

/// Attaches the offending run or parameters to a core error.
pub(crate) trait Context<T> {
    fn context(self, f: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for frqmc::Result<T> {
    fn context(self, f: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Run { context: f(), source })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "frqmc",
    version,
    about = "Frequency-resolved photon-counting experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment file (JSON).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in experiment, see `frqmc presets`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, default `out/<experiment name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Clicks to record per run (replaces any duration).
    #[arg(long)]
    pub clicks: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Histogram bin width.
    #[arg(long)]
    pub bin: Option<f64>,
    /// Histogram half range.
    #[arg(long = "tau-max")]
    pub tau_max: Option<f64>,
}

impl Common {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            clicks: self.clicks,
            dt: self.dt,
            bin: self.bin,
            tau_max: self.tau_max,
        }
    }

    /// The experiment named by `--config` or `--preset`, overrides applied.
    pub fn spec(&self) -> Result<ExperimentSpec, CliError> {
        let mut s = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentSpec::load(p)?,
            (None, Some(name)) => {
                presets::preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}")))?
            }
            (None, None) => return Err(CliError::Usage("one of --config or --preset is required".into())),
        };
        s.apply(&self.overrides());
        s.validate()?;
        Ok(s)
    }

    fn optional_spec(&self) -> Result<Option<ExperimentSpec>, CliError> {
        if self.config.is_none() && self.preset.is_none() {
            Ok(None)
        } else {
            self.spec().map(Some)
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Master-equation correlation curves, scans and spectra.
    Theory(Common),
    /// Quantum-jump click streams, one file per run.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write a Poisson control stream of this rate instead.
        #[arg(long, requires = "duration")]
        poisson: Option<f64>,
        /// Duration of the Poisson control stream.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Correlation, waiting-time and counting tables from stream files.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Stream CSV files written by `simulate`.
        #[arg(required = true)]
        streams: Vec<PathBuf>,
        /// Add a theory column computed from each stream's configuration.
        #[arg(long)]
        theory: bool,
        /// Cross-correlate the two given streams (τ = t_second − t_first).
        #[arg(long)]
        pair: bool,
    },
    /// Effective photon-number distributions.
    Reconstruct(Common),
    /// Filtered emission spectra.
    Spectrum(Common),
    /// List built-in experiments, or print one as JSON.
    Presets { name: Option<String> },
}

/// Runs a parsed command line and returns the files it wrote.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::Theory(c) => commands::theory(&c.spec()?),
        Command::Simulate {
            common,
            poisson: Some(rate),
            duration,
        } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            commands::poisson(rate, duration.unwrap_or(0.0), common.seed.unwrap_or(0), &out)
        }
        Command::Simulate { common, .. } => commands::simulate(&common.spec()?),
        Command::Analyze {
            common,
            streams,
            theory,
            pair,
        } => {
            let spec = common.optional_spec()?;
            let analysis = spec.as_ref().map(|s| s.analysis.clone()).unwrap_or_default();
            let out = common
                .out
                .clone()
                .or_else(|| spec.as_ref().map(|s| s.out_dir()))
                .unwrap_or_else(|| PathBuf::from("out").join("analysis"));
            let opts = commands::AnalyzeOptions {
                analysis,
                bin: common.bin,
                tau_max: common.tau_max,
                theory,
                pair,
            };
            commands::analyze(&streams, &opts, &out)
        }
        Command::Reconstruct(c) => commands::reconstruct(&c.spec()?),
        Command::Spectrum(c) => commands::spectrum(&c.spec()?),
        Command::Presets { name: None } => {
            let mut out = std::io::stdout().lock();
            for n in presets::names() {
                let s = presets::preset(n).expect("listed preset");
                // a closed pipe is not an error here
                let _ = writeln!(out, "{n:18} {}", s.description);
            }
            Ok(Vec::new())
        }
        Command::Presets { name: Some(n) } => {
            let s = presets::preset(&n).ok_or_else(|| CliError::Usage(format!("unknown preset {n:?}")))?;
            let _ = writeln!(std::io::stdout().lock(), "{}", s.to_json());
            Ok(Vec::new())
        }
    }
}
