use std::path::{Path, PathBuf};
use std::process::ExitCode;

use awkd_core::runner::{emit_summary, parse_config, run_experiment, ExperimentConfig, KINDS};
use awkd_core::Error;
use clap::{Parser, Subcommand};

const EXIT_ASSERTION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Adaptive multi-teacher distillation experiments.
#[derive(Debug, Parser)]
#[command(name = "awkd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory. Defaults to the config's `output`, then `out/<kind>`.
        #[arg(long, env = "AWKD_OUT")]
        out: Option<PathBuf>,
        /// Print only the final verdict.
        #[arg(long)]
        quiet: bool,
    },
    /// Parse and validate a config without running it.
    Validate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the experiment kinds.
    ListKinds,
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, ExitCode> {
    parse_config(path, seed).map_err(|e| {
        match &e {
            Error::Config(issues) => {
                eprintln!("{}: {} config issue(s)", path.display(), issues.len());
                for issue in issues {
                    eprintln!("  - {issue}");
                }
            }
            other => eprintln!("{}: {other}", path.display()),
        }
        ExitCode::from(EXIT_CONFIG)
    })
}

fn run(path: &Path, seed: Option<u64>, out: Option<PathBuf>, quiet: bool) -> ExitCode {
    let config = match load(path, seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let dir = out.or_else(|| config.raw.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(config.kind()));
    let record = match run_experiment(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let emitted = match emit_summary(&record, &dir) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error writing results to {}: {e}", dir.display());
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    if quiet {
        println!("{} {}", if record.passed() { "PASS" } else { "FAIL" }, config.kind());
    } else {
        print!("{}", emitted.text);
        println!("results in {}", dir.display());
    }
    if record.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ASSERTION)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, seed, out, quiet } => run(&config, seed, out, quiet),
        Command::Validate { config, seed } => match load(&config, seed) {
            Ok(c) => {
                println!("{}: ok ({}, hash {})", config.display(), c.kind(), c.hash);
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::ListKinds => {
            for kind in KINDS {
                println!("{kind}");
            }
            ExitCode::SUCCESS
        }
    }
}
