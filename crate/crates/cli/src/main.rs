//! `ffdg`: validate models, assemble DG operators, solve for `ψ` and the
//! stationary distribution, simulate, and run convergence studies.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::CliError;

#[derive(Debug, Parser)]
#[command(name = "ffdg", version, about = "DG solver for stochastic fluid-fluid processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file for structural errors.
    Validate(ValidateArgs),
    /// Assemble the DG operators and report their properties.
    Assemble(SolveArgs),
    /// Solve the Riccati equation for the first-return operator.
    Psi(PsiArgs),
    /// Compute the stationary distribution.
    Stationary(StationaryArgs),
    /// Simulate first-return paths, optionally with a long-run occupation estimate.
    Simulate(SimulateArgs),
    /// Convergence study of the first-fluid marginal in h and in the boundary width.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model description in TOML.
    #[arg(long)]
    model: PathBuf,
    /// Directory for CSV and JSON outputs.
    #[arg(long, default_value = "ffdg-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    stencil: StencilArgs,
}

#[derive(Debug, Clone, Args)]
pub struct StencilArgs {
    /// Number of nodes of the ω stencil.
    #[arg(long = "K", requires_all = ["h", "dh"], conflicts_with = "nodes")]
    pub k: Option<usize>,
    /// Interior mesh width.
    #[arg(long)]
    pub h: Option<f64>,
    /// Boundary mesh width.
    #[arg(long)]
    pub dh: Option<f64>,
    /// Explicit comma-separated nodes starting at 0.
    #[arg(long, value_delimiter = ',')]
    pub nodes: Option<Vec<f64>>,
    /// Interior basis degree (0 or 1).
    #[arg(long, default_value_t = 1)]
    pub degree: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RhoModeArg {
    Normalized,
    Verbatim,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    stencil: StencilArgs,
    #[arg(long, value_enum, default_value_t = RhoModeArg::Normalized)]
    rho_mode: RhoModeArg,
    /// Write every assembled matrix as CSV.
    #[arg(long)]
    dump_operators: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PsiMethodArg {
    Newton,
    FixedPoint,
}

#[derive(Debug, Args)]
struct PsiSolverArgs {
    #[arg(long, value_enum, default_value_t = PsiMethodArg::Newton)]
    psi_method: PsiMethodArg,
    #[arg(long, default_value_t = 1e-10)]
    psi_tol: f64,
    #[arg(long)]
    psi_max_iter: Option<usize>,
}

#[derive(Debug, Args)]
struct PsiArgs {
    #[command(flatten)]
    solve: SolveArgs,
    #[command(flatten)]
    psi: PsiSolverArgs,
    /// Write ψ and its index maps as CSV.
    #[arg(long)]
    dump_psi: bool,
    /// Start a first-return distribution from a point mass at this X level.
    #[arg(long, requires = "initial_phase")]
    initial_x: Option<f64>,
    /// Phase label of the point mass.
    #[arg(long, requires = "initial_x")]
    initial_phase: Option<String>,
}

#[derive(Debug, Args)]
struct StationaryArgs {
    #[command(flatten)]
    solve: SolveArgs,
    #[command(flatten)]
    psi: PsiSolverArgs,
    /// Levels for the density export as `start:stop:step`.
    #[arg(long, default_value = "0:10:0.1")]
    y_grid: String,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    /// Time after which a path is censored.
    #[arg(long, default_value_t = 1e4)]
    horizon: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 5.0)]
    x0: f64,
    #[arg(long, default_value_t = 0.0)]
    y0: f64,
    /// Phase label at time zero; defaults to the first phase with `c > 0`.
    #[arg(long)]
    phase: Option<String>,
    /// Also estimate long-run occupation with this run length per chain.
    #[arg(long)]
    occupation_time: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    burn_in: f64,
    #[arg(long, default_value_t = 16)]
    chains: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReferenceArg {
    Reflected,
    Unbounded,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    degrees: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "1.5,1.0,0.5,0.25,0.1,0.05")]
    hs: Vec<f64>,
    /// Boundary mesh width for the h study.
    #[arg(long, default_value_t = 1e-6)]
    dh: f64,
    #[arg(long, value_enum, default_value_t = ReferenceArg::Reflected)]
    reference: ReferenceArg,
    /// Boundary widths for the Δh study; empty to skip it.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.3,0.2,0.1,0.05")]
    dhs: Vec<f64>,
    /// Interior width for the Δh study.
    #[arg(long, default_value_t = 1.0)]
    dh_study_h: f64,
    /// Finest boundary width, used as the Δh-study baseline.
    #[arg(long, default_value_t = 0.005)]
    dh_reference: f64,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("FFDG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("FFDG_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Validate(a) => commands::validate(&a.model, &a.stencil),
        Command::Assemble(a) => commands::assemble(&a),
        Command::Psi(a) => commands::psi(&a),
        Command::Stationary(a) => commands::stationary(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Convergence(a) => commands::convergence(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| run(cli)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "unknown failure".into());
        Err(CliError::Internal(msg))
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::FAILURE
        }
    }
}
