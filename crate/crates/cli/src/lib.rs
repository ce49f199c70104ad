//! `drmfuse`: fuse a reference region's measurements with neighboring regions
//! under a density ratio model and report threshold exceedance probabilities.

pub mod commands;
pub mod error;
pub mod ingest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "drmfuse", version, about = "Density ratio model fusion of regional samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the joint model and print estimates with standard errors.
    Fit(DataArgs),
    /// Refine each neighbor's tilt; one row per period.
    Refine(DataArgs),
    /// Exceedance probabilities with Wald intervals, fused and empirical.
    Threshold(ThresholdArgs),
    /// Empirical and fused reference CDFs at each reference value.
    Gof(DataArgs),
    /// Monte Carlo comparison of the fused and empirical CDF estimators.
    Simulate(SimulateArgs),
    /// Write a synthetic `region,period,value` file.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input file with header `region,period,value`.
    #[arg(long)]
    pub input: PathBuf,
    /// Reference region.
    #[arg(long)]
    pub reference: String,
    /// Comma-separated neighbor regions.
    #[arg(long, value_delimiter = ',')]
    pub neighbors: Vec<String>,
    /// `all` or a comma-separated list of period labels.
    #[arg(long, default_value = "all")]
    pub periods: String,
    /// `auto`, `global`, or per-neighbor specs such as "x,logx;log2x".
    #[arg(long, default_value = "auto")]
    pub tilt: String,
    /// Significance level for tilt refinement.
    #[arg(long, default_value_t = drm_core::inference::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Write output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',', default_value = "5,10,25,50,100,150,200")]
    pub thresholds: Vec<f64>,
    /// Confidence level of the intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 300)]
    pub replications: usize,
    /// Size of each of the three samples.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Lower end of the integration grid.
    #[arg(long, default_value_t = 0.0)]
    pub lo: f64,
    /// Upper end of the integration grid.
    #[arg(long, default_value_t = 10.0)]
    pub hi: f64,
    /// Number of grid steps.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Run replicates on one thread.
    #[arg(long)]
    pub serial: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Layout {
    /// Five regions over six periods with lognormal values.
    Radon,
    /// Exponential reference with Gamma and Lognormal neighbors, one period `sim`.
    Simulation,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Layout::Radon)]
    pub layout: Layout,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Multiplier on the radon layout's per-period sizes.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Per-sample size of the simulation layout.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    fn out_path(&self) -> Option<&PathBuf> {
        match self {
            Command::Fit(a) | Command::Refine(a) | Command::Gof(a) => a.out.as_ref(),
            Command::Threshold(a) => a.data.out.as_ref(),
            Command::Simulate(a) => a.out.as_ref(),
            Command::Synth(a) => a.out.as_ref(),
        }
    }
}

/// Runs a parsed command, writing to `--out` when given and to `stdout` otherwise.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command.out_path() {
        Some(path) => {
            let mut buf: Vec<u8> = Vec::new();
            dispatch(&cli.command, &mut buf)?;
            let mut f = BufWriter::new(File::create(path)?);
            f.write_all(&buf)?;
            f.flush()?;
            Ok(())
        }
        None => dispatch(&cli.command, stdout),
    }
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Fit(a) => commands::cmd_fit(a, out),
        Command::Refine(a) => commands::cmd_refine(a, out),
        Command::Threshold(a) => commands::cmd_threshold(a, out),
        Command::Gof(a) => commands::cmd_gof(a, out),
        Command::Simulate(a) => commands::cmd_simulate(a, out),
        Command::Synth(a) => commands::cmd_synth(a, out),
    }
}
