//! The multi-task training loop.
//!
//! Each step snapshots the old policy, samples one response group per task,
//! feeds the per-task mean metrics to the coefficient scheduler, ascends
//! the parameters along the analytic objective gradient with the current
//! coefficients, and records a trace row per task. Everything is driven by
//! the run seed: sampling seeds derive from (seed, step, task), contexts
//! rotate round-robin, and tasks are always processed in index order, so a
//! run is a pure function of its setup.

use crate::config::ExperimentSetup;
use crate::dca::{Branch, CoefficientState, DcaConfig};
use crate::objectives::{objective_gradient, objective_value, Batch, ObjectiveError};
use crate::reward::RewardConfig;

use super::{derive_seed, expected_capability, refresh_batch, sample_group, PolicyModel, SimError};

/// One per-step, per-task trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub task: usize,
    /// Exact expected capability after this step's update.
    pub h: f64,
    pub coefficient: f64,
    /// Surrogate objective of the step's batch evaluated after the update
    /// (at the update itself the policy equals the rollout policy and the
    /// surrogate is identically zero).
    pub objective: f64,
    pub grad_norm: f64,
    /// Scheduler branch for this task when an adjustment ran this step.
    pub branch: Option<Branch>,
}

/// One per-adjustment, per-task scheduler trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct DcaTraceRow {
    pub step: u64,
    pub task: usize,
    pub coefficient: f64,
    pub baseline: f64,
    pub mu: f64,
    pub mu_past: f64,
    pub delta_total: f64,
    pub branch: Branch,
}

/// Full record of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub seed: u64,
    pub task_names: Vec<String>,
    pub records: Vec<TraceRecord>,
    pub dca_rows: Vec<DcaTraceRow>,
    pub initial_h: Vec<f64>,
    pub final_h: Vec<f64>,
}

fn ensure_finite(value: f64, step: u64) -> Result<f64, SimError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SimError::NonFinite { step })
    }
}

/// Runs one seeded training run and returns its trace.
pub fn train(setup: &ExperimentSetup, seed: u64) -> Result<TrainingTrace, SimError> {
    for task in &setup.tasks {
        task.env.validate()?;
    }
    let envs: Vec<_> = setup.tasks.iter().map(|t| t.env.clone()).collect();
    let weights: Vec<f64> = setup.tasks.iter().map(|t| t.weight).collect();
    let task_count = setup.tasks.len();
    let reward_cfg = RewardConfig::default();

    let mut policy = PolicyModel::new(&envs, setup.temperature);
    if setup.variant.kl_beta > 0.0 {
        policy.freeze_reference();
    }
    let mut scheduler = match &setup.dca {
        Some(config) => Some(CoefficientState::new(DcaConfig::clone(config)).map_err(|e| {
            SimError::InvalidEnv { env: "dca".into(), reason: e.to_string() }
        })?),
        None => None,
    };
    let mut coefficients = vec![1.0; task_count];

    let mut records = Vec::new();
    let mut dca_rows = Vec::new();
    let mut h_current = Vec::with_capacity(task_count);
    for (k, task) in setup.tasks.iter().enumerate() {
        let (h, _) = expected_capability(&policy, &task.env, k)?;
        h_current.push(h);
    }
    let initial_h = h_current.clone();
    for k in 0..task_count {
        records.push(TraceRecord {
            step: 0,
            task: k,
            h: h_current[k],
            coefficient: coefficients[k],
            objective: 0.0,
            grad_norm: 0.0,
            branch: None,
        });
    }

    for step in 1..=setup.steps {
        policy.snapshot_old();

        let mut groups = Vec::with_capacity(task_count);
        let mut means = Vec::with_capacity(task_count);
        for (k, task) in setup.tasks.iter().enumerate() {
            let ctx = ((step - 1) % task.env.contexts() as u64) as usize;
            let group = sample_group(
                &policy,
                &task.env,
                k,
                &task.mapping,
                ctx,
                setup.group_size,
                derive_seed(seed, step, k as u64),
                &reward_cfg,
            )?;
            let mean = group.responses.iter().map(|r| r.metric.value).sum::<f64>()
                / group.group_size() as f64;
            means.push(mean);
            groups.push(group);
        }
        let mut batch = Batch::new(groups, weights.clone())?;

        let mut branch_events: Vec<Option<Branch>> = vec![None; task_count];
        if let Some(state) = scheduler.as_mut() {
            state
                .record_metrics(&means)
                .map_err(|e| SimError::InvalidEnv { env: "dca".into(), reason: e.to_string() })?;
            if state.warmed_up() && state.step() % state.config().t_window == 0 {
                let report = state
                    .adjust()
                    .map_err(|e| SimError::InvalidEnv { env: "dca".into(), reason: e.to_string() })?;
                for entry in report {
                    branch_events[entry.task] = Some(entry.branch);
                    dca_rows.push(DcaTraceRow {
                        step,
                        task: entry.task,
                        coefficient: entry.coefficient,
                        baseline: entry.baseline,
                        mu: entry.mu,
                        mu_past: entry.mu_past,
                        delta_total: entry.delta_total,
                        branch: entry.branch,
                    });
                }
            }
            coefficients.copy_from_slice(state.coefficients());
        }

        let grad = match objective_gradient(&batch, &setup.variant, Some(&coefficients), &policy) {
            Ok(grad) => grad,
            Err(ObjectiveError::ClipBoundary(_)) => {
                // measure-zero event: move the ratios off the boundary
                for group in &mut batch.groups {
                    for resp in &mut group.responses {
                        for lp in &mut resp.new_logps {
                            *lp += 1e-12;
                        }
                    }
                }
                objective_gradient(&batch, &setup.variant, Some(&coefficients), &policy)?
            }
            Err(e) => return Err(e.into()),
        };
        let grad_norm = ensure_finite(grad.iter().map(|g| g * g).sum::<f64>().sqrt(), step)?;

        for (t, g) in policy.theta.iter_mut().zip(&grad) {
            *t += setup.step_size * g;
        }
        if policy.theta.iter().any(|t| !t.is_finite()) {
            return Err(SimError::NonFinite { step });
        }

        refresh_batch(&mut batch, &policy);
        let objective = ensure_finite(
            objective_value(&batch, &setup.variant, Some(&coefficients))?,
            step,
        )?;

        for (k, task) in setup.tasks.iter().enumerate() {
            let (h, _) = expected_capability(&policy, &task.env, k)?;
            h_current[k] = ensure_finite(h, step)?;
        }
        for k in 0..task_count {
            records.push(TraceRecord {
                step,
                task: k,
                h: h_current[k],
                coefficient: coefficients[k],
                objective,
                grad_norm,
                branch: branch_events[k],
            });
        }
    }

    Ok(TrainingTrace {
        seed,
        task_names: setup.tasks.iter().map(|t| t.name.clone()).collect(),
        records,
        dca_rows,
        initial_h,
        final_h: h_current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn bandit_setup(steps: u64) -> ExperimentSetup {
        let toml = format!(
            r#"
[environments.easy]
kind = "classification_bandit"
num_labels = 2
targets = [0]

[[tasks]]
name = "cls"
env = "easy"
weight = 1.0
mapping = {{ kind = "identity" }}

[objective]
family = "grpo"

[training]
steps = {steps}
step_size = 0.1
seed = 7
"#
        );
        ExperimentConfig::from_toml_str(&toml).unwrap().resolve().unwrap()
    }

    #[test]
    fn zero_steps_yields_initial_record_only() {
        let trace = train(&bandit_setup(0), 7).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].step, 0);
        assert_eq!(trace.initial_h, trace.final_h);
    }

    #[test]
    fn single_bandit_improves() {
        let trace = train(&bandit_setup(500), 7).unwrap();
        assert!(
            trace.final_h[0] > trace.initial_h[0],
            "H went {} -> {}",
            trace.initial_h[0],
            trace.final_h[0]
        );
    }

    #[test]
    fn traces_are_deterministic() {
        let a = train(&bandit_setup(50), 13).unwrap();
        let b = train(&bandit_setup(50), 13).unwrap();
        assert_eq!(a, b);
        let c = train(&bandit_setup(50), 14).unwrap();
        assert_ne!(a, c);
    }
}
