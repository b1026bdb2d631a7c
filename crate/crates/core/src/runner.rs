//! Experiment orchestration: seed sweeps with a bounded worker pool,
//! deterministic trace/summary persistence, and paired-config comparison.
//!
//! All outputs are byte-reproducible: floats use Rust's shortest
//! round-trip formatting, JSON field order is fixed, and nothing
//! time- or host-dependent is written.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ExperimentSetup};
use crate::sim::{train, SimError, TrainingTrace};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "ARSPO_LAB_OUT";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("configs are not comparable: {0}")]
    Mismatch(String),
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|source| RunnerError::Io { path: parent.display().to_string(), source })?;
    }
    std::fs::write(path, contents)
        .map_err(|source| RunnerError::Io { path: path.display().to_string(), source })
}

/// Output directory precedence: explicit flag, then the config's output
/// section, then `ARSPO_LAB_OUT`, then `./runs`.
pub fn resolve_out_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = config.output.as_ref().and_then(|o| o.directory.as_ref()) {
        return PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("runs")
}

/// Renders one trace as CSV (one row per step per task).
pub fn trace_csv(trace: &TrainingTrace) -> String {
    let mut out = String::from("step,task,H,l,objective,grad_norm,branch\n");
    for rec in &trace.records {
        let branch = rec.branch.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            rec.step,
            trace.task_names[rec.task],
            rec.h,
            rec.coefficient,
            rec.objective,
            rec.grad_norm,
            branch
        ));
    }
    out
}

/// Renders the scheduler adjustments of one trace as CSV.
pub fn dca_csv(trace: &TrainingTrace) -> String {
    let mut out = String::from("step,task,l,B,mu,mu_past,delta_total,branch_fired\n");
    for row in &trace.dca_rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.step,
            trace.task_names[row.task],
            row.coefficient,
            row.baseline,
            row.mu,
            row.mu_past,
            row.delta_total,
            row.branch
        ));
    }
    out
}

#[derive(Debug, Serialize)]
struct TaskSummary {
    name: String,
    h_initial: f64,
    h_final: f64,
    delta_h: f64,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    seed: u64,
    steps: u64,
    tasks: Vec<TaskSummary>,
    trace_file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    dca_file: Option<String>,
}

#[derive(Debug, Serialize)]
struct SummaryDoc<'a> {
    schema_version: u32,
    config: &'a ExperimentConfig,
    runs: Vec<RunSummary>,
}

/// Result of a `run` invocation: in-memory traces plus where they went.
#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub traces: Vec<TrainingTrace>,
    pub summary_path: PathBuf,
}

/// Runs every seed of the sweep on a pool of at most `workers` threads,
/// each run fully isolated, then persists traces and the summary in seed
/// order.
fn train_sweep(
    setup: &ExperimentSetup,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<TrainingTrace>, RunnerError> {
    let workers = workers.max(1).min(seeds.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<TrainingTrace, SimError>>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= seeds.len() {
                    break;
                }
                let outcome = train(setup, seeds[idx]);
                results.lock().expect("no panics while holding the lock")[idx] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("all workers joined")
        .into_iter()
        .map(|slot| slot.expect("every seed was scheduled").map_err(RunnerError::from))
        .collect()
}

fn seeds_for(
    config: &ExperimentConfig,
    override_seeds: Option<&[u64]>,
) -> Result<Vec<u64>, RunnerError> {
    match override_seeds {
        Some(seeds) if !seeds.is_empty() => Ok(seeds.to_vec()),
        Some(_) => Err(RunnerError::Mismatch("an explicit seed list cannot be empty".into())),
        None => Ok(config.seeds()?),
    }
}

/// Executes a config across its seed list and writes per-seed trace CSVs
/// (plus scheduler CSVs when the scheduler is on) and one summary JSON.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    override_seeds: Option<&[u64]>,
    workers: usize,
) -> Result<RunOutput, RunnerError> {
    let setup = config.resolve()?;
    let seeds = seeds_for(config, override_seeds)?;
    let traces = train_sweep(&setup, &seeds, workers)?;

    let mut runs = Vec::with_capacity(traces.len());
    for trace in &traces {
        let trace_file = format!("trace_seed{}.csv", trace.seed);
        write_file(&out_dir.join(&trace_file), &trace_csv(trace))?;
        let dca_file = if setup.dca.is_some() {
            let name = format!("dca_seed{}.csv", trace.seed);
            write_file(&out_dir.join(&name), &dca_csv(trace))?;
            Some(name)
        } else {
            None
        };
        let tasks = trace
            .task_names
            .iter()
            .enumerate()
            .map(|(k, name)| TaskSummary {
                name: name.clone(),
                h_initial: trace.initial_h[k],
                h_final: trace.final_h[k],
                delta_h: trace.final_h[k] - trace.initial_h[k],
            })
            .collect();
        runs.push(RunSummary {
            seed: trace.seed,
            steps: setup.steps,
            tasks,
            trace_file,
            dca_file,
        });
    }
    let summary = SummaryDoc { schema_version: SCHEMA_VERSION, config, runs };
    let summary_path = out_dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_file(&summary_path, &text)?;
    Ok(RunOutput { out_dir: out_dir.to_path_buf(), traces, summary_path })
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskComparison {
    pub task: String,
    pub h_initial_a: f64,
    pub h_final_a: f64,
    pub delta_a: f64,
    pub h_initial_b: f64,
    pub h_final_b: f64,
    pub delta_b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub tasks: Vec<TaskComparison>,
    /// Strict improvement of config B over config A on the hard task.
    pub hard_task_b_improves: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonDoc {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub tasks: Vec<String>,
    /// The task with the lowest initial expected capability (ties to the
    /// lowest index) — the one difficulty-imbalance starves.
    pub hard_task: String,
    pub per_seed: Vec<SeedComparison>,
    pub hard_task_wins_b: usize,
}

/// Result of a `compare` invocation.
#[derive(Debug)]
pub struct CompareOutput {
    pub doc: ComparisonDoc,
    pub comparison_path: PathBuf,
    pub traces_a: Vec<TrainingTrace>,
    pub traces_b: Vec<TrainingTrace>,
}

/// Runs two configs over a shared seed list and reports per-task gains and
/// the per-seed hard-task win/loss record of config B over config A.
/// The configs must share environments, tasks, and step budget.
pub fn compare_experiments(
    config_a: &ExperimentConfig,
    config_b: &ExperimentConfig,
    out_dir: &Path,
    override_seeds: Option<&[u64]>,
    workers: usize,
) -> Result<CompareOutput, RunnerError> {
    if config_a.environments != config_b.environments {
        return Err(RunnerError::Mismatch("environment sections differ".into()));
    }
    let names_a: Vec<_> = config_a.tasks.iter().map(|t| (&t.name, &t.env)).collect();
    let names_b: Vec<_> = config_b.tasks.iter().map(|t| (&t.name, &t.env)).collect();
    if names_a != names_b {
        return Err(RunnerError::Mismatch("task lists differ".into()));
    }
    if config_a.training.steps != config_b.training.steps {
        return Err(RunnerError::Mismatch("step budgets differ".into()));
    }
    let seeds = seeds_for(config_a, override_seeds)?;
    if override_seeds.is_none() && config_b.seeds()? != seeds {
        return Err(RunnerError::Mismatch("seed lists differ".into()));
    }

    let setup_a = config_a.resolve()?;
    let setup_b = config_b.resolve()?;
    let traces_a = train_sweep(&setup_a, &seeds, workers)?;
    let traces_b = train_sweep(&setup_b, &seeds, workers)?;

    let task_names = traces_a[0].task_names.clone();
    let hard_task_idx = traces_a[0]
        .initial_h
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.partial_cmp(b).expect("capabilities are finite"))
        .map(|(k, _)| k)
        .expect("at least one task");

    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut wins = 0usize;
    for (a, b) in traces_a.iter().zip(&traces_b) {
        let tasks: Vec<TaskComparison> = task_names
            .iter()
            .enumerate()
            .map(|(k, name)| TaskComparison {
                task: name.clone(),
                h_initial_a: a.initial_h[k],
                h_final_a: a.final_h[k],
                delta_a: a.final_h[k] - a.initial_h[k],
                h_initial_b: b.initial_h[k],
                h_final_b: b.final_h[k],
                delta_b: b.final_h[k] - b.initial_h[k],
            })
            .collect();
        let improves = b.final_h[hard_task_idx] > a.final_h[hard_task_idx];
        wins += improves as usize;
        per_seed.push(SeedComparison { seed: a.seed, tasks, hard_task_b_improves: improves });
    }

    let doc = ComparisonDoc {
        schema_version: SCHEMA_VERSION,
        seeds,
        tasks: task_names.clone(),
        hard_task: task_names[hard_task_idx].clone(),
        per_seed,
        hard_task_wins_b: wins,
    };
    let comparison_path = out_dir.join("comparison.json");
    let mut text = serde_json::to_string_pretty(&doc).expect("comparison serializes");
    text.push('\n');
    write_file(&comparison_path, &text)?;
    Ok(CompareOutput { doc, comparison_path, traces_a, traces_b })
}
