//! Command-line front end: math-verification suites, config-driven
//! experiments, and paired-experiment comparison.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 numerical non-finite detected mid-run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use arspo_core::config::ExperimentConfig;
use arspo_core::runner::{self, RunnerError};
use arspo_core::sim::SimError;
use arspo_core::verify;

#[derive(Parser)]
#[command(name = "arspo", version, about = "Balanced multi-task RL optimization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite and print its JSON report.
    Verify {
        /// One of: jacobian, gradients, dynamics, dca-golden, all.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config-driven experiment: per-seed trace CSVs plus a summary JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (falls back to the config, then $ARSPO_LAB_OUT, then ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seed list overriding the config.
        #[arg(long)]
        seeds: Option<String>,
        /// Worker threads for seed sweeps.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run two configs over a shared seed list and compare per-task gains.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        /// Output directory for comparison.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seed list overriding both configs.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn parse_seeds(arg: Option<&str>) -> Result<Option<Vec<u64>>, String> {
    match arg {
        None => Ok(None),
        Some(text) => text
            .split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|_| format!("invalid seed '{s}'")))
            .collect::<Result<Vec<u64>, _>>()
            .map(Some),
    }
}

fn runner_exit(err: &RunnerError) -> ExitCode {
    match err {
        RunnerError::Sim(SimError::NonFinite { step }) => {
            eprintln!("error: non-finite value at step {step}");
            ExitCode::from(3)
        }
        other => {
            eprintln!("error: {other}");
            ExitCode::from(2)
        }
    }
}

fn cmd_verify(suite: &str, out: Option<&PathBuf>) -> ExitCode {
    let report = if suite == "all" {
        verify::run_all()
    } else {
        match verify::run_suite(suite) {
            Some(r) => verify::VerifyReport::from_suites(vec![r]),
            None => {
                eprintln!(
                    "error: unknown suite '{suite}' (expected one of: {}, all)",
                    verify::SUITE_NAMES.join(", ")
                );
                return ExitCode::from(2);
            }
        }
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    print!("{text}");
    if let Some(path) = out {
        if let Err(e) = std::fs::write(path, &text) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    for suite in &report.suites {
        for check in suite.failing() {
            eprintln!(
                "FAIL {}/{}: measured {} > tolerance {}",
                suite.suite, check.name, check.measured, check.tolerance
            );
        }
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_run(
    config_path: &PathBuf,
    out: Option<&PathBuf>,
    seeds: Option<&str>,
    workers: usize,
) -> ExitCode {
    let seeds = match parse_seeds(seeds) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let config = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out_dir = runner::resolve_out_dir(out.map(|p| p.as_path()), &config);
    match runner::run_experiment(&config, &out_dir, seeds.as_deref(), workers) {
        Ok(output) => {
            for trace in &output.traces {
                println!(
                    "seed {}: wrote {}",
                    trace.seed,
                    output.out_dir.join(format!("trace_seed{}.csv", trace.seed)).display()
                );
            }
            println!("summary: {}", output.summary_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => runner_exit(&e),
    }
}

fn cmd_compare(
    path_a: &PathBuf,
    path_b: &PathBuf,
    out: Option<&PathBuf>,
    seeds: Option<&str>,
    workers: usize,
) -> ExitCode {
    let seeds = match parse_seeds(seeds) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let config_a = match ExperimentConfig::load(path_a) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let config_b = match ExperimentConfig::load(path_b) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out_dir = runner::resolve_out_dir(out.map(|p| p.as_path()), &config_a);
    match runner::compare_experiments(&config_a, &config_b, &out_dir, seeds.as_deref(), workers) {
        Ok(output) => {
            println!(
                "hard task '{}': config B improves in {}/{} seeds",
                output.doc.hard_task,
                output.doc.hard_task_wins_b,
                output.doc.seeds.len()
            );
            println!("comparison: {}", output.comparison_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => runner_exit(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Verify { suite, out } => cmd_verify(suite, out.as_ref()),
        Command::Run { config, out, seeds, workers } => {
            cmd_run(config, out.as_ref(), seeds.as_deref(), *workers)
        }
        Command::Compare { config_a, config_b, out, seeds, workers } => {
            cmd_compare(config_a, config_b, out.as_ref(), seeds.as_deref(), *workers)
        }
    }
}
