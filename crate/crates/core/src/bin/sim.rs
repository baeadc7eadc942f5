use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use central_spin::cli::{self, RunConfig, RunOptions, Scenario, Severity};

/// Runs one scenario described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "sim", version, about)]
struct Args {
    scenario: Scenario,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweep points (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Check the config and print diagnostics without running.
    #[arg(long)]
    validate_only: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();

    if args.validate_only {
        let diagnostics = match cli::validate(&args.config) {
            Ok(d) => d,
            Err(e) => {
                eprintln!("error: {}: {e}", args.config.display());
                return ExitCode::FAILURE;
            }
        };
        for d in &diagnostics {
            println!("{d}");
        }
        let failed = diagnostics.iter().any(|d| d.severity == Severity::Error);
        if !failed {
            match RunConfig::from_path(&args.config) {
                Ok(c) if c.scenario != args.scenario => {
                    println!(
                        "error: command line asks for {} but the config is for {}",
                        args.scenario, c.scenario
                    );
                    return ExitCode::FAILURE;
                }
                _ => println!("ok"),
            }
        }
        return if failed {
            ExitCode::FAILURE
        } else {
            ExitCode::SUCCESS
        };
    }

    let config = match RunConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::FAILURE;
        }
    };
    let options = RunOptions {
        scenario: Some(args.scenario),
        out_dir: args.out,
        seed: args.seed,
        workers: args.workers,
    };
    match cli::run(&config, &options) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
