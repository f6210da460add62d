use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use conviction_cli::{
    cmd_report, cmd_run, cmd_simulate, cmd_validate, format_summary, CliError, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "conviction",
    version,
    about = "Multi-turn stick-or-switch evaluation harness for multiple-choice clinical QA"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check config, data, exemplars, endpoint reachability, and condition
    /// feasibility without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute the configured run and emit transcripts, report, summary
    /// table, and plots.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override run.out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override run.master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override run.concurrency.
        #[arg(long)]
        concurrency: Option<usize>,
        /// Skip conversations already present in the transcript log.
        #[arg(long)]
        resume: bool,
    },
    /// Run the identical pipeline against the configured stochastic agent;
    /// no network.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Recompute metrics and plots from persisted transcript logs.
    Report {
        /// Output directory for report.json, summary.csv, and plots/.
        #[arg(long)]
        out: PathBuf,
        /// Merge logs whose manifests do not match.
        #[arg(long)]
        allow_mixed: bool,
        /// Transcript log files.
        #[arg(required = true)]
        transcripts: Vec<PathBuf>,
    },
}

fn apply_overrides(
    config: &mut RunConfig,
    out: Option<PathBuf>,
    seed: Option<u64>,
    concurrency: Option<usize>,
) {
    if let Some(out) = out {
        config.run.out_dir = out;
    }
    if let Some(seed) = seed {
        config.run.master_seed = seed;
    }
    if let Some(concurrency) = concurrency {
        config.run.concurrency = concurrency;
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { config } => {
            let config = RunConfig::load(&config)?;
            let report = cmd_validate(&config)?;
            print!("{report}");
            if report.passed() {
                println!("all checks passed");
                Ok(())
            } else {
                Err(CliError::ChecksFailed(report))
            }
        }
        Command::Run {
            config,
            out,
            seed,
            concurrency,
            resume,
        } => {
            let mut config = RunConfig::load(&config)?;
            apply_overrides(&mut config, out, seed, concurrency);
            let outcome = cmd_run(&config, resume)?;
            print!("{}", format_summary(&outcome));
            Ok(())
        }
        Command::Simulate {
            config,
            out,
            seed,
            concurrency,
        } => {
            let mut config = RunConfig::load(&config)?;
            apply_overrides(&mut config, out, seed, concurrency);
            let outcome = cmd_simulate(&config)?;
            print!("{}", format_summary(&outcome));
            Ok(())
        }
        Command::Report {
            out,
            allow_mixed,
            transcripts,
        } => {
            let outcome = cmd_report(&transcripts, &out, allow_mixed)?;
            print!("{}", format_summary(&outcome));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                CliError::ChecksFailed(_) => eprintln!("validation failed"),
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(err.exit_code())
        }
    }
}
