//! `cusp`: command-line front end for the cusp-universality toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical
//! failure or a failed check.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

/// Environment variable selecting the worker thread count.
pub const THREADS_ENV: &str = "CUSP_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "cusp",
    version,
    about = "Density of states, cusp shapes, free convolution and Pearcey statistics"
)]
pub struct Cli {
    /// Seed from which all randomness is derived.
    #[arg(long, global = true, default_value_t = 20_190_101)]
    pub seed: u64,
    /// Output directory for tables, reports, plots and the manifest.
    #[arg(long, global = true, default_value = "cusp-out")]
    pub out: PathBuf,
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Self-consistent density on a grid.
    Solve(SolveArgs),
    /// Classify the singularity of the density near a point.
    Classify(ClassifyArgs),
    /// Track edges and minima under the semicircular flow.
    Flow(FlowArgs),
    /// Pearcey and finite-N correlation kernels.
    #[command(subcommand)]
    Kernel(KernelCommand),
    /// Monte-Carlo ensembles.
    #[command(subcommand)]
    Ensemble(EnsembleCommand),
    /// Run the acceptance criteria and write a pass/fail report.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Model file (TOML).
    #[arg(long)]
    pub model: PathBuf,
    /// Spectral window `lo:hi`.
    #[arg(long, allow_hyphen_values = true)]
    pub tau_range: String,
    /// Imaginary part used for the evaluation.
    #[arg(long, default_value_t = 1e-6)]
    pub eta: f64,
    /// Largest density change between neighbouring grid points.
    #[arg(long, default_value_t = 1e-3)]
    pub resolution: f64,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Model file (TOML).
    #[arg(long)]
    pub model: PathBuf,
    /// Approximate location of the singularity.
    #[arg(long, allow_hyphen_values = true)]
    pub near: f64,
    /// Window of the density profile used for the support, `lo:hi`.
    #[arg(long, allow_hyphen_values = true, default_value = "-6:6")]
    pub window: String,
    /// Search radius around `--near`.
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// Model file (TOML) defining the initial density.
    #[arg(long)]
    pub model: PathBuf,
    /// Flow times `start:end:steps`.
    #[arg(long, allow_hyphen_values = true)]
    pub s_range: String,
    /// Window containing the gap or minimum, `lo:hi`; defaults to `near ± 1`.
    #[arg(long, allow_hyphen_values = true)]
    pub window: Option<String>,
    /// Approximate location of the gap or minimum.
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub near: f64,
}

#[derive(Debug, Subcommand)]
pub enum KernelCommand {
    /// `K_α(x, y)` on a square grid.
    Pearcey {
        /// Deformation parameter of the kernel.
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        alpha: f64,
        /// Grid `lo:hi:n`.
        #[arg(long, allow_hyphen_values = true, default_value = "-3:3:61")]
        grid: String,
        /// Also write an SVG of the one-point density.
        #[arg(long)]
        svg: bool,
    },
    /// Brézin–Hikami kernel of a given spectrum.
    Finite {
        /// CSV file with the eigenvalues in its first column (or a column named `eigenvalue`).
        #[arg(long)]
        spectrum: PathBuf,
        /// Size of the Gaussian component.
        #[arg(long)]
        ct: f64,
        /// Base point of the contours; must not coincide with an eigenvalue.
        #[arg(long, allow_hyphen_values = true)]
        xi: f64,
        /// Grid `lo:hi:n`; defaults to the spectral window.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// Also write an SVG of the one-point density.
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum EnsembleCommand {
    /// Sample spectra and write tables, statistics and plots.
    Run {
        /// Ensemble configuration (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one verification suite on an ensemble.
    Verify {
        /// Ensemble configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Statistic to check.
        #[arg(long, value_enum)]
        suite: Suite,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Rigidity,
    Locallaw,
    Deloc,
    Cusp,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Analytic criteria only.
    #[arg(long)]
    pub quick: bool,
    /// Comma-separated criterion numbers to run.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Vec<u8>,
    /// Problem sizes of the Monte-Carlo criteria.
    #[arg(long, value_enum, default_value_t = Scale::Full)]
    pub scale: Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Full,
    Reduced,
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got '{value}'"))?;
    if threads == 0 {
        return Err(format!("{THREADS_ENV} must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match commands::run(&cli) {
        Ok(status) => status.into(),
        Err(e) => {
            eprintln!("error: {e:#}");
            commands::exit_code(&e).into()
        }
    }
}
