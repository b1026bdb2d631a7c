//! Declarative experiment configuration: a strict TOML document naming the
//! environments, per-task reward mappings and weights, the objective
//! variant, the coefficient scheduler, and the training loop parameters.
//!
//! Parsing is total-or-error: unknown keys are rejected and every semantic
//! check reports the offending field path.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dca::DcaConfig;
use crate::metrics::TaskKind;
use crate::objectives::{FFamily, ObjectiveVariant};
use crate::reward::RewardMapping;
use crate::sim::{EnvKind, TaskEnv};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

/// Top-level config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environments: BTreeMap<String, EnvKind>,
    pub tasks: Vec<TaskSection>,
    pub objective: ObjectiveSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dca: Option<DcaSection>,
    pub training: TrainingSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: String,
    /// Key into `environments`.
    pub env: String,
    /// Dataset weight `|D_k| / |D|`.
    pub weight: f64,
    pub mapping: RewardMapping,
    /// High-performance threshold for the scheduler; defaults by task kind
    /// (0.10 classification, 0.50 image, 0.60 text and video).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    /// One of `grpo`, `gspo`, `sapo`.
    pub family: String,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_tau")]
    pub tau_pos: f64,
    #[serde(default = "default_tau")]
    pub tau_neg: f64,
    #[serde(default)]
    pub kl_beta: f64,
}

fn default_epsilon() -> f64 {
    0.2
}

fn default_tau() -> f64 {
    1.0
}

/// Scheduler section; omit it to train with all coefficients fixed at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcaSection {
    pub t_warm: u64,
    pub t_window: u64,
    #[serde(default = "default_alpha_boost")]
    pub alpha_boost: f64,
    #[serde(default = "default_alpha_decay")]
    pub alpha_decay: f64,
    #[serde(default = "default_eps_mom")]
    pub eps_mom: f64,
    #[serde(default = "default_eps_rescue")]
    pub eps_rescue: f64,
    #[serde(default = "default_l_max")]
    pub l_max: f64,
}

fn default_alpha_boost() -> f64 {
    1.1
}

fn default_alpha_decay() -> f64 {
    0.9
}

fn default_eps_mom() -> f64 {
    0.02
}

fn default_eps_rescue() -> f64 {
    0.10
}

fn default_l_max() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub steps: u64,
    pub step_size: f64,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

fn default_group_size() -> usize {
    8
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
}

/// Default high-performance threshold by task family.
pub fn default_tau_high(kind: TaskKind) -> f64 {
    match kind {
        TaskKind::Classification => 0.10,
        TaskKind::ImageLocalization => 0.50,
        TaskKind::TextLocalization | TaskKind::VideoLocalization => 0.60,
    }
}

/// One resolved task: environment, reward mapping, weight, threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTask {
    pub name: String,
    pub env: TaskEnv,
    pub mapping: RewardMapping,
    pub weight: f64,
    pub tau_high: f64,
}

/// A validated, fully resolved experiment ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetup {
    pub tasks: Vec<ResolvedTask>,
    pub variant: ObjectiveVariant,
    pub dca: Option<DcaConfig>,
    pub steps: u64,
    pub step_size: f64,
    pub group_size: usize,
    pub temperature: f64,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    /// Seed list: `seed` and `seeds` are mutually exclusive and one is
    /// required.
    pub fn seeds(&self) -> Result<Vec<u64>, ConfigError> {
        match (&self.training.seed, &self.training.seeds) {
            (Some(_), Some(_)) => {
                Err(invalid("training.seed", "set either seed or seeds, not both"))
            }
            (Some(s), None) => Ok(vec![*s]),
            (None, Some(list)) if !list.is_empty() => Ok(list.clone()),
            _ => Err(invalid("training.seed", "a seed (or a non-empty seed list) is required")),
        }
    }

    /// Validates everything and resolves environment references.
    pub fn resolve(&self) -> Result<ExperimentSetup, ConfigError> {
        if self.tasks.is_empty() {
            return Err(invalid("tasks", "at least one task is required"));
        }
        let mut tasks = Vec::with_capacity(self.tasks.len());
        let mut weight_sum = 0.0;
        for (idx, section) in self.tasks.iter().enumerate() {
            let field = |name: &str| format!("tasks[{idx}].{name}");
            let kind = self
                .environments
                .get(&section.env)
                .ok_or_else(|| invalid(field("env"), format!("unknown environment '{}'", section.env)))?;
            let env = TaskEnv::new(section.name.clone(), kind.clone());
            env.validate().map_err(|e| invalid(field("env"), e.to_string()))?;
            if section.weight.is_nan() || section.weight <= 0.0 {
                return Err(invalid(field("weight"), "must be positive"));
            }
            section
                .mapping
                .validate()
                .map_err(|e| invalid(field("mapping"), e.to_string()))?;
            let tau_high = section.tau_high.unwrap_or_else(|| default_tau_high(env.task_kind()));
            if tau_high.is_nan() || tau_high <= 0.0 {
                return Err(invalid(field("tau_high"), "must be positive"));
            }
            weight_sum += section.weight;
            tasks.push(ResolvedTask {
                name: section.name.clone(),
                env,
                mapping: section.mapping.clone(),
                weight: section.weight,
                tau_high,
            });
        }
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "tasks",
                format!("task weights must sum to 1, got {weight_sum}"),
            ));
        }

        let family = match self.objective.family.as_str() {
            "grpo" => FFamily::Grpo { epsilon: self.objective.epsilon },
            "gspo" => FFamily::Gspo { epsilon: self.objective.epsilon },
            "sapo" => {
                FFamily::Sapo { tau_pos: self.objective.tau_pos, tau_neg: self.objective.tau_neg }
            }
            other => {
                return Err(invalid(
                    "objective.family",
                    format!("unknown family '{other}' (expected grpo, gspo, or sapo)"),
                ))
            }
        };
        let variant = ObjectiveVariant { family, kl_beta: self.objective.kl_beta };
        variant
            .validate()
            .map_err(|e| invalid("objective", e.to_string()))?;

        let dca = match &self.dca {
            None => None,
            Some(section) => {
                let config = DcaConfig {
                    t_warm: section.t_warm,
                    t_window: section.t_window,
                    alpha_boost: section.alpha_boost,
                    alpha_decay: section.alpha_decay,
                    eps_mom: section.eps_mom,
                    eps_rescue: section.eps_rescue,
                    tau_high: tasks.iter().map(|t| t.tau_high).collect(),
                    l_max: section.l_max,
                    baseline_floor: 1e-6,
                };
                config.validate().map_err(|e| invalid("dca", e.to_string()))?;
                Some(config)
            }
        };

        if self.training.step_size.is_nan() || self.training.step_size <= 0.0 {
            return Err(invalid("training.step_size", "must be positive"));
        }
        if self.training.group_size < 2 {
            return Err(invalid("training.group_size", "must be at least 2"));
        }
        if self.training.temperature.is_nan() || self.training.temperature <= 0.0 {
            return Err(invalid("training.temperature", "must be positive"));
        }
        let seeds = self.seeds()?;

        Ok(ExperimentSetup {
            tasks,
            variant,
            dca,
            steps: self.training.steps,
            step_size: self.training.step_size,
            group_size: self.training.group_size,
            temperature: self.training.temperature,
            seeds,
        })
    }
}
