use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use onestate_cli::{run_command, CliError, Command, RunOptions, ScenarioConfig};

#[derive(Parser)]
#[command(name = "onestate", version, about = "One State fault detection scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Single closed-loop run with nominal and uncompensated comparison.
    Trace(Args),
    /// Seeded ensemble with the closed-loop DEP table.
    Montecarlo(Args),
    /// Sampling-period design for a constant input.
    Design(Args),
    /// EDP sweep over the sampling period for a periodic input.
    Sweep(Args),
    /// Empirical vs analytic detection error per step.
    ValidateDep(Args),
    /// Runs the mode named in the config's `run.mode`.
    Run(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `noise.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `run.trials`.
    #[arg(long)]
    trials: Option<usize>,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (command, args) = match cli.command {
        Cmd::Trace(a) => (Command::Trace, a),
        Cmd::Montecarlo(a) => (Command::MonteCarlo, a),
        Cmd::Design(a) => (Command::Design, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::ValidateDep(a) => (Command::ValidateDep, a),
        Cmd::Run(a) => (Command::FromConfig, a),
    };
    let cfg = ScenarioConfig::load(&args.config)?;
    let opts = RunOptions {
        out: args.out,
        seed: args.seed,
        trials: args.trials,
    };
    let report = run_command(command, &cfg, &opts)?;
    for f in &report.files {
        println!("{}", opts.out.join(f).display());
    }
    Ok(report.feasible)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("infeasible design: no sampling period meets the tolerance");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
