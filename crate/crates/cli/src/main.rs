//! `dpd`: robust estimation and testing from the command line.

mod input;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpd_core::DpdError;

use crate::input::InputError;

#[derive(Parser, Debug)]
#[command(name = "dpd", version, about = "Minimum DPD estimation and DPD-based tests")]
pub struct Cli {
    /// Worker threads for grid scans and simulations.
    #[arg(long, global = true, env = "DPD_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// MDPDE (and, with a hypothesis, the restricted MDPDE) for each τ.
    Fit(FitArgs),
    /// DPD test statistic, null distribution and p-value for each (τ, γ).
    Test(TestArgs),
    /// Approximate power at a fixed alternative over a cyclic design.
    Power(PowerArgs),
    /// Smallest n reaching a target approximate power.
    Samplesize(SampleSizeArgs),
    /// Second-order influence of the test statistic along a contamination grid.
    Influence(InfluenceArgs),
    /// Monte Carlo size/power study from a scenario file.
    Simulate(SimulateArgs),
    /// Design diagnostics.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FamilyArg {
    Normal,
    Poisson,
    Bernoulli,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Use the bundled salinity data instead of --data.
    #[arg(long)]
    pub salinity: bool,
    /// Response column (default: last column).
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long, value_enum, default_value = "normal")]
    pub family: FamilyArg,
    /// Known error standard deviation; σ is estimated when omitted.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// 1-based data rows to delete, e.g. "5,16".
    #[arg(long, value_delimiter = ',')]
    pub drop_rows: Vec<usize>,
}

#[derive(Args, Debug, Default)]
pub struct HypothesisArgs {
    /// Null value of β. With a known or given σ the null is simple, otherwise σ is a nuisance.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub beta0: Option<Vec<f64>>,
    /// Null value of σ for a simple null when σ is estimated.
    #[arg(long, requires = "beta0")]
    pub sigma0: Option<f64>,
    /// Constraint rows l_k of L'β = l0, as "1,0,0;0,1,0".
    #[arg(long, allow_hyphen_values = true, conflicts_with = "beta0")]
    pub l_rows: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, requires = "l_rows")]
    pub l0: Option<Vec<f64>>,
    /// Also restrict σ = value under a composite null.
    #[arg(long)]
    pub null_sigma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TuningArgs {
    /// Estimator tuning values, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub tau: Vec<f64>,
    /// Statistic tuning values; when omitted γ = τ, otherwise all (τ, γ) pairs.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Random restarts per fit.
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Use the generic eigenvalue null law even where a closed form exists.
    #[arg(long)]
    pub generic: bool,
    /// Use the observed rather than expected Hessian in the restricted fit.
    #[arg(long)]
    pub observed_hessian: bool,
    #[arg(long)]
    pub series_terms: Option<usize>,
    #[arg(long)]
    pub series_tol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct OutputArgs {
    /// JSON result file (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// CSV table with one row per grid cell.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyp: HypothesisArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyp: HypothesisArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct AlternativeArgs {
    /// Alternative β*.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub beta_star: Vec<f64>,
    /// Alternative σ* (defaults to --sigma or 1).
    #[arg(long)]
    pub sigma_star: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PowerArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyp: HypothesisArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub alt: AlternativeArgs,
    /// Sample sizes; the design cycles through the data rows.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SampleSizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyp: HypothesisArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub alt: AlternativeArgs,
    /// Target power.
    #[arg(long, default_value_t = 0.8)]
    pub target: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct InfluenceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyp: HypothesisArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// 1-based contaminated row.
    #[arg(long, default_value_t = 1)]
    pub row: usize,
    /// Grid half-width in standard deviations of the contaminated observation.
    #[arg(long, default_value_t = dpd_core::influence::DEFAULT_HALF_WIDTH)]
    pub half_width: f64,
    #[arg(long, default_value_t = dpd_core::influence::DEFAULT_GRID_POINTS)]
    pub points: usize,
    /// Local alternative Δ for power/level influence (simple nulls).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub delta: Option<Vec<f64>>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario JSON; the built-in size scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct DiagnosticsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Exit with status 2 when the design is rank deficient.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<InputError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<DpdError>() {
        Some(e) if e.is_validation() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: cannot start {k} worker threads: {e}");
            return ExitCode::from(3);
        }
    }
    match run::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
