//! `chronofeat`: sampling, splitting, featurization, sweeps and reports for
//! hour-resolution event logs.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{Settings, UsageError};

#[derive(Debug, Parser)]
#[command(name = "chronofeat", version, about = "Leakage-safe temporal feature engineering for event logs")]
struct Cli {
    /// JSON settings file: an optional top-level `seed` and one object of
    /// option values per subcommand. Flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    settings: Option<PathBuf>,

    /// Seed used wherever a command's own seed is not given.
    #[arg(long, global = true, env = "CHRONOFEAT_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Keep a deterministic hash-based fraction of rows.
    Sample(commands::SampleArgs),
    /// Per-day row counts and click rates.
    Stats(commands::StatsArgs),
    /// Rolling-tail fold boundaries and split statistics.
    Splits(commands::SplitsArgs),
    /// Time-aware target-encoding cache for the whole log.
    Te(commands::TeArgs),
    /// Feature matrices for one fold and one window design.
    Featurize(commands::FeaturizeArgs),
    /// Synthetic click log with planted history-dependent signal.
    Synth(commands::SynthArgs),
    /// Train and evaluate every cell of a design grid.
    Sweep(commands::SweepArgs),
    /// ROC AUC and PR AUC of a prediction file.
    Eval(commands::EvalArgs),
    /// League table, traffic light, TE uplift and event-count sweep reports.
    Report(commands::ReportArgs),
    /// CTR-by-day and unseen-rate series.
    Eda(commands::EdaArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = Settings::load(cli.settings.as_deref())?;
    let ctx = commands::Context {
        seed: cli.seed.or(settings.seed()),
        settings,
    };
    match cli.command {
        Command::Sample(a) => commands::sample(&ctx, a),
        Command::Stats(a) => commands::stats(&ctx, a),
        Command::Splits(a) => commands::splits(&ctx, a),
        Command::Te(a) => commands::te(&ctx, a),
        Command::Featurize(a) => commands::featurize(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Sweep(a) => commands::sweep(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
        Command::Eda(a) => commands::eda(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            eprintln!("error: {e:#}");
            if usage {
                eprintln!("run with --help for usage");
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
