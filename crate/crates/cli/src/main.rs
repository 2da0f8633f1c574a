//! `qnd`: validate, simulate, estimate, verify and report experiments.
//!
//! Exit codes: 0 pass, 1 failed test or assumption, 2 usage or config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qnd_core::harness::{self, LoadedConfig, Report, RunOptions, DEFAULT_SEED};
use qnd_core::Error;

#[derive(Parser, Debug)]
#[command(name = "qnd", version, about = "Nondemolition measurement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Master seed; overrides the config. Without either, 20240917 is used.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Maximum number of worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug)]
struct Io {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the probe and state assumptions for a config.
    Validate(Io),
    /// Generate the ensemble and persist its trajectories.
    Simulate(Io),
    /// Recompute statistics from trajectories persisted by `simulate`.
    Estimate(Io),
    /// Generate and test in one pass.
    Verify(Io),
    /// Print the summary of a finished run.
    Report {
        /// Directory holding summary.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

enum Outcome {
    Pass,
    Fail,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ValidationFailed(_) => 1,
        e if e.is_usage() => 2,
        _ => 1,
    }
}

fn load(path: &Path, seed: Option<u64>) -> qnd_core::Result<LoadedConfig> {
    let mut loaded = LoadedConfig::read(path)?;
    if let Some(seed) = seed {
        loaded.config.seed = seed;
    }
    log::info!(
        "config {} (seed {}, default {DEFAULT_SEED})",
        path.display(),
        loaded.config.seed
    );
    Ok(loaded)
}

fn require_out(io: &Io) -> qnd_core::Result<&Path> {
    io.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this subcommand".into()))
}

fn finish(report: &Report, out: Option<&Path>) -> qnd_core::Result<Outcome> {
    if let Some(dir) = out {
        report.write(dir)?;
        log::info!("report written to {}", dir.display());
    }
    print!("{}", report.summary.render());
    Ok(if report.passed() { Outcome::Pass } else { Outcome::Fail })
}

fn run(cli: &Cli) -> qnd_core::Result<Outcome> {
    let options = RunOptions {
        threads: cli.threads,
        ..RunOptions::default()
    };
    match &cli.command {
        Command::Validate(io) => {
            let loaded = load(&io.config, cli.seed)?;
            finish(&harness::validate(&loaded)?, io.out.as_deref())
        }
        Command::Simulate(io) => {
            let out = require_out(io)?;
            let loaded = load(&io.config, cli.seed)?;
            let manifest = harness::simulate(&loaded, &options, out)?;
            println!(
                "simulated {} trajectories of length {} into {} (seed {})",
                manifest.ensemble_size,
                manifest.k_max,
                out.display(),
                manifest.seed
            );
            Ok(Outcome::Pass)
        }
        Command::Estimate(io) => {
            let out = require_out(io)?;
            let loaded = load(&io.config, cli.seed)?;
            let report = harness::estimate(&loaded, &options, out)?;
            finish(&report, Some(out))
        }
        Command::Verify(io) => {
            let loaded = load(&io.config, cli.seed)?;
            let report = harness::run_experiment(&loaded, &options)?;
            finish(&report, io.out.as_deref())
        }
        Command::Report { out } => {
            let summary = Report::read_summary(out)?;
            print!("{}", summary.render());
            Ok(if summary.passed { Outcome::Pass } else { Outcome::Fail })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::ValidationFailed(report) = &e {
                for c in report.failed() {
                    eprintln!(
                        "  {} ({}): worst {} vs {}{}",
                        c.name,
                        c.assumption,
                        c.worst,
                        c.threshold,
                        c.location.as_deref().map(|l| format!(" at {l}")).unwrap_or_default()
                    );
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
