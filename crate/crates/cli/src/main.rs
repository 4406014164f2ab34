//! `fedmtl`: deterministic federated multi-task learning laboratory.
//!
//! Subcommands: `run` (single simulation), `sweep` (grid of runs),
//! `accountant` (privacy budget arithmetic and trade-off curves), `verify`
//! (convergence-theory check suite), `report` (cross-run comparison).
//!
//! Exit codes: 0 success, 2 configuration error, 3 divergence,
//! 4 verification failure.

mod accountant_cmd;
mod artifact;
mod config;
mod error;
mod plot;
mod report_cmd;
mod run_cmd;
mod sweep_cmd;
mod verify_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use accountant_cmd::AccountantArgs;

#[derive(Parser)]
#[command(name = "fedmtl", version, about = "Deterministic federated multi-task learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single simulation from a config file and persist artifacts.
    Run {
        /// Path to the TOML config.
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute every grid point in the config's [sweep] section.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Privacy accounting: noise calibration, budget composition, curves.
    Accountant(AccountantCliArgs),
    /// Check convergence-theory bounds on a synthetic problem.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Report directory (default: <output root>/<experiment>-verify).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare persisted run artifacts: overlay plot and markdown table.
    Report {
        /// Artifact directories produced by `run` or `sweep`.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Log-scale the loss axis.
        #[arg(long)]
        log_y: bool,
    },
}

#[derive(Args)]
struct AccountantCliArgs {
    /// Privacy budget epsilon (requires --delta; derives sigma).
    #[arg(long)]
    eps: Option<f64>,
    /// Privacy budget delta.
    #[arg(long)]
    delta: Option<f64>,
    /// Noise multiplier (conflicts with --eps/--delta).
    #[arg(long)]
    sigma: Option<f64>,
    /// Clients sampled per round.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Total clients.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Number of composed releases.
    #[arg(long, default_value_t = 1)]
    t: usize,
    /// Use the literal composition expression instead of the CLT form.
    #[arg(long)]
    literal: bool,
    /// Directory for trade-off curve CSV/SVG output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Epsilon values for the delta(eps) table.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 4.0, 8.0])]
    report_eps: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run_cmd::cmd_run(&config).map(|_| ()),
        Command::Sweep { config } => sweep_cmd::cmd_sweep(&config).map(|_| ()),
        Command::Accountant(a) => accountant_cmd::cmd_accountant(&AccountantArgs {
            eps: a.eps,
            delta: a.delta,
            sigma: a.sigma,
            k: a.k,
            m: a.m,
            t: a.t,
            literal: a.literal,
            out: a.out,
            report_eps: a.report_eps,
        }),
        Command::Verify { config, out } => {
            verify_cmd::cmd_verify(&config, out.as_deref()).map(|_| ())
        }
        Command::Report { dirs, out, log_y } => report_cmd::cmd_report(&dirs, &out, log_y),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
