//! `quickdetect`: calibrate, characterise and compare change detection rules.
//!
//! Exit codes: 0 success, 1 usage, 2 numerical or calibration failure,
//! 3 verification failure.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quickdetect::verify::Profile;

use crate::config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Numerical(#[from] quickdetect::Error),
    #[error("verification failed")]
    Verification,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Io(_) => 1,
            Self::Numerical(e) => match e {
                quickdetect::Error::InvalidParameter(_) | quickdetect::Error::UnsupportedModel(_) => 1,
                _ => 2,
            },
            Self::Verification => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "quickdetect", version, about = "Quickest change detection experiments")]
struct Cli {
    /// Worker threads (default: number of logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file: JSON for calibrate, CSV for the others (the JSON summary
    /// then goes next to it with a .json extension). Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find the threshold whose ARL to false alarm matches `B`.
    Calibrate(ExperimentArgs),
    /// Operating characteristics of one rule.
    Oc(ExperimentArgs),
    /// Compare rules calibrated to the same ARL.
    Compare(ExperimentArgs),
    /// Repeated application of a rule with the change at `nu`.
    Multicyclic(ExperimentArgs),
    /// Run the self-check suite.
    Verify {
        #[arg(long, value_parser = parse_profile, default_value = "quick")]
        profile: Profile,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: quickdetect::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, CliError::Verification) {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::Calibrate(args) => experiment(&args, commands::calibrate_cmd),
        Command::Oc(args) => experiment(&args, commands::oc_cmd),
        Command::Compare(args) => experiment(&args, commands::compare_cmd),
        Command::Multicyclic(args) => experiment(&args, commands::multicyclic_cmd),
        Command::Verify { profile, seed, out } => {
            let (report, passed) = commands::verify_cmd(profile, seed);
            match out {
                Some(path) => output::write_file(&path, &report)?,
                None => output::write_stdout(&report)?,
            }
            if passed {
                Ok(())
            } else {
                for line in report.lines().filter(|l| l.contains("\"passed\":false")) {
                    eprintln!("FAILED {line}");
                }
                Err(CliError::Verification)
            }
        }
    }
}

fn experiment(
    args: &ExperimentArgs,
    cmd: fn(&ExperimentConfig) -> Result<commands::Output, CliError>,
) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&args.config, args.seed)?;
    let out = cmd(&cfg)?;
    match (args.out.as_deref().or(cfg.out.as_deref()), out.csv) {
        (Some(path), Some(csv)) => {
            output::write_file(path, &csv)?;
            output::write_file(&summary_path(path), &out.json)
        }
        (Some(path), None) => output::write_file(path, &out.json),
        (None, Some(csv)) => output::write_stdout(&format!("{}\n{csv}", out.json)),
        (None, None) => output::write_stdout(&out.json),
    }
}

fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}
