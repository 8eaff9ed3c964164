//! `slq` — config-driven stochastic LQ workflows.
//!
//! Exit codes: `0` all checks passed; `1` a check failed or a solver error
//! occurred; `2` the config or invocation was invalid.

use clap::{Args, Parser, Subcommand};
use slq_cli::commands;
use slq_cli::config::load_config;
use slq_cli::report::Format;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "slq",
    version,
    about = "Stochastic LQ control and game workflows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report symmetry/definiteness conditions (informational; always exit 0).
    Validate(CommonArgs),
    /// Solve the open-loop problem and report cost and stationarity.
    Solve(CommonArgs),
    /// Verify the second-order cost expansion across an epsilon sweep.
    GradientCheck(CommonArgs),
    /// Verify transposition, duality, and the four adjoint pairings.
    DualityCheck(CommonArgs),
    /// Solve the two-player game and verify the equilibrium.
    Nash(CommonArgs),
    /// Compare the iterative solver against the dense brute-force oracle.
    OracleCompare(CommonArgs),
    /// K-doubling convergence study of the optimal cost.
    Convergence(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to a JSON problem config.
    #[arg(long)]
    config: PathBuf,
    /// Seed for the command's generated test data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stdout rendering when no output directory is given.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Directory to write <command>.json and <command>.csv into.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args): (&'static str, &CommonArgs) = match &cli.command {
        Command::Validate(a) => ("validate", a),
        Command::Solve(a) => ("solve", a),
        Command::GradientCheck(a) => ("gradient-check", a),
        Command::DualityCheck(a) => ("duality-check", a),
        Command::Nash(a) => ("nash", a),
        Command::OracleCompare(a) => ("oracle-compare", a),
        Command::Convergence(a) => ("convergence", a),
    };

    let loaded = match load_config(&args.config) {
        Ok(loaded) => loaded,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let built = match loaded.config.build() {
        Ok(built) => built,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let report = match commands::run(name, &loaded, built, args.seed) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("{name} error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = report.emit(args.format, args.out.as_deref()) {
        eprintln!("report error: {e:#}");
        return ExitCode::from(2);
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
