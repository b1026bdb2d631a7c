//! Numerical instrumentation for the gradient dynamics of group-normalized
//! policy optimization.
//!
//! The central quantity is the rate of change of a token's gradient term
//! `W * adv` along a parameter direction. It splits into two parts:
//!
//! - `term_1 = W' * adv`, the policy-geometry part;
//! - `term_2 = W * (g'(x) / (G sigma)) * [(G-1) - adv^2] * H'`, which chains
//!   reward-mapping slope, group statistics, and the capability slope `H'`
//!   of the task.
//!
//! `term_2` is the amplification channel: on a hard task the capability
//! surface is flat (`H'` tiny) and the channel dies no matter how the
//! rewards are scaled, while a convex mapping with a steep slope at high
//! metrics revives it for superior responses. The helpers here compute both
//! terms from closed forms and provide the finite-difference probe used to
//! validate them.

use serde::Serialize;

use crate::group_norm::{
    advantage_derivative_terms, normalize_group, GroupNormError, NormalizedGroup,
};
use crate::metrics::MetricValue;
use crate::reward::{RewardError, RewardMapping};
use crate::sim::env::TaskEnv;
use crate::sim::policy::PolicyModel;
use crate::sim::{expected_capability_at, SimError};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("rate decomposition needs a smooth reward mapping; {0:?} is not differentiable")]
    NonSmoothMapping(RewardMapping),
    #[error("scenario is malformed: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    GroupNorm(#[from] GroupNormError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Per-response reward-slope-to-diversity ratios `g'(x_i) / sigma` for one
/// group under one mapping. Under a linear mapping the entries are all
/// equal; a convex mapping concentrates them on the best responses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityProfile {
    pub values: Vec<f64>,
    pub mapping: RewardMapping,
    pub mu: f64,
    pub sigma: f64,
}

impl SensitivityProfile {
    /// Amplification statistic: the largest entry over the mean entry.
    /// Exactly 1 when every entry is equal (the mean uses pairwise
    /// summation, which is exact for identical values in power-of-two
    /// groups).
    pub fn max_over_mean(&self) -> f64 {
        let max = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max / (pairwise_sum(&self.values) / self.values.len() as f64)
    }

    /// Index of the largest entry, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

pub fn sensitivity_profile(
    metrics: &[MetricValue],
    mapping: &RewardMapping,
) -> Result<SensitivityProfile, DynamicsError> {
    let rewards = metrics
        .iter()
        .map(|m| mapping.map(m.value))
        .collect::<Result<Vec<f64>, _>>()?;
    let group = normalize_group(&rewards)?;
    if group.degenerate {
        return Err(DynamicsError::GroupNorm(GroupNormError::DegenerateGroup));
    }
    let values = metrics
        .iter()
        .map(|m| Ok(mapping.derivative(m.value)? / group.sigma))
        .collect::<Result<Vec<f64>, DynamicsError>>()?;
    Ok(SensitivityProfile { values, mapping: mapping.clone(), mu: group.mu, sigma: group.sigma })
}

/// The statistical stability factor `(G - 1) - adv^2` from differentiating
/// the z-score normalization. Depends only on the response's rank inside
/// its group, never on task difficulty.
pub fn stat_factor(advantage: f64, group_size: usize) -> f64 {
    (group_size as f64 - 1.0) - advantage * advantage
}

/// Raw reward-gradient ratio between two responses under an exponential
/// mapping with slope `alpha`: `e^{alpha (x_i - x_j)}`. Shared capability
/// gradients cancel, so the ratio depends only on the metric gap.
pub fn dominance_ratio(x_i: f64, x_j: f64, alpha: f64) -> f64 {
    (alpha * (x_i - x_j)).exp()
}

/// Split of the advantage total derivative into its self and cross parts,
/// plus the measured self-vs-cross dominance for the best response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TotalDerivativeReport {
    pub self_term: Vec<f64>,
    pub cross_term: Vec<f64>,
    /// `|self_term|` of the top-reward response over the largest single
    /// cross contribution it receives; infinite when every cross
    /// contribution is zero.
    pub dominance_ratio: f64,
}

pub fn total_advantage_derivative_report(
    group: &NormalizedGroup,
    reward_grads: &[f64],
) -> Result<TotalDerivativeReport, DynamicsError> {
    let (self_term, cross_term) = advantage_derivative_terms(group, reward_grads)?;
    let best = group
        .raw
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("rewards are finite"))
        .map(|(i, _)| i)
        .expect("non-empty group");
    let g = group.group_size() as f64;
    let scale = 1.0 / (g * group.sigma);
    let adv = &group.advantages;
    let max_cross = (0..adv.len())
        .filter(|&j| j != best)
        .map(|j| (scale * (1.0 + adv[best] * adv[j]) * reward_grads[j]).abs())
        .fold(0.0f64, f64::max);
    let dominance = if max_cross == 0.0 {
        f64::INFINITY
    } else {
        self_term[best].abs() / max_cross
    };
    Ok(TotalDerivativeReport { self_term, cross_term, dominance_ratio: dominance })
}

/// The two-term split of `d/dtheta (W * adv)` for one token along one
/// parameter direction. `total` is exactly `term_1 + term_2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateDecomposition {
    pub term_1: f64,
    pub term_2: f64,
    pub total: f64,
}

/// A differentiable-by-construction probe configuration: an enumerable
/// environment, a policy (current and old parameters), a fixed set of G
/// response action tuples for one context, a smooth reward mapping, and the
/// smooth-gate temperatures. The group may be sampled or constructed — the
/// analysis is per-token for a given group either way.
#[derive(Debug, Clone)]
pub struct SmoothScenario {
    pub env: TaskEnv,
    pub policy: PolicyModel,
    pub task: usize,
    pub context: usize,
    pub actions: Vec<Vec<usize>>,
    pub mapping: RewardMapping,
    pub tau_pos: f64,
    pub tau_neg: f64,
}

impl SmoothScenario {
    fn validate(&self) -> Result<(), DynamicsError> {
        match self.mapping {
            RewardMapping::Step { .. } | RewardMapping::Relaxed { .. } => {
                return Err(DynamicsError::NonSmoothMapping(self.mapping.clone()))
            }
            _ => {}
        }
        if self.actions.len() < 2 {
            return Err(DynamicsError::InvalidScenario(format!(
                "need at least 2 responses, got {}",
                self.actions.len()
            )));
        }
        let positions = self.env.position_sizes().len();
        if self.actions.iter().any(|a| a.len() != positions) {
            return Err(DynamicsError::InvalidScenario(
                "every response needs one action per position".into(),
            ));
        }
        if self.tau_pos.is_nan() || self.tau_neg.is_nan() || self.tau_pos <= 0.0 || self.tau_neg <= 0.0 {
            return Err(DynamicsError::InvalidScenario("gate temperatures must be positive".into()));
        }
        Ok(())
    }

    pub fn metrics(&self) -> Vec<f64> {
        self.actions.iter().map(|a| self.env.metric(self.context, a).value).collect()
    }

    pub fn mapped_group(&self) -> Result<NormalizedGroup, DynamicsError> {
        let rewards = self
            .metrics()
            .iter()
            .map(|&x| self.mapping.map(x))
            .collect::<Result<Vec<f64>, _>>()?;
        let group = normalize_group(&rewards)?;
        if group.degenerate {
            return Err(DynamicsError::GroupNorm(GroupNormError::DegenerateGroup));
        }
        Ok(group)
    }

    fn token_ratio_at(&self, theta: &[f64], response: usize, token: usize) -> f64 {
        let action = self.actions[response][token];
        let new = self.policy.logp_at(theta, self.task, self.context, token, action);
        let old = self.policy.logp_old(self.task, self.context, token, action);
        (new - old).exp()
    }
}

// Smooth gate f(r) = (4/tau) sigmoid(tau (r-1)) and its first two
// derivatives: f' = 4 s (1-s), f'' = 4 tau s (1-s)(1-2s).
fn gate_first(tau: f64, r: f64) -> f64 {
    let s = 1.0 / (1.0 + (-tau * (r - 1.0)).exp());
    4.0 * s * (1.0 - s)
}

fn gate_second(tau: f64, r: f64) -> f64 {
    let s = 1.0 / (1.0 + (-tau * (r - 1.0)).exp());
    4.0 * tau * s * (1.0 - s) * (1.0 - 2.0 * s)
}

/// Closed-form rate decomposition for one token of one response along a
/// parameter direction.
///
/// `term_2` follows the direct-path model: the response's own metric rides
/// the capability surface (`x_i` moves at rate `H'`), the group statistics
/// are held at their observed values, and the smooth gate's temperature is
/// selected by the response's advantage sign at the base point.
pub fn rate_decomposition(
    scenario: &SmoothScenario,
    direction: &[f64],
    response_index: usize,
    token_index: usize,
) -> Result<RateDecomposition, DynamicsError> {
    scenario.validate()?;
    let group = scenario.mapped_group()?;
    let metrics = scenario.metrics();
    let adv = group.advantages[response_index];
    let tau = if adv > 0.0 { scenario.tau_pos } else { scenario.tau_neg };
    let policy = &scenario.policy;
    let theta = &policy.theta;

    let r = scenario.token_ratio_at(theta, response_index, token_index);
    let action = scenario.actions[response_index][token_index];
    let u = policy.dir_grad_logp(theta, scenario.task, scenario.context, token_index, action, direction);
    let hess = policy.dir_hessian_logp(theta, scenario.task, scenario.context, token_index, direction);

    let f1 = gate_first(tau, r);
    let f2 = gate_second(tau, r);
    let w = f1 * r * u;
    // dW/deps with dr/deps = r u and du/deps = dir^T Hess(log pi) dir
    let w_prime = (f2 * r + f1) * r * u * u + f1 * r * hess;
    let term_1 = w_prime * adv;

    let (_, grad_h) = expected_capability_at(policy, &scenario.env, scenario.task, theta)?;
    let h_dir: f64 = grad_h.iter().zip(direction).map(|(g, d)| g * d).sum();
    let g_slope = scenario.mapping.derivative(metrics[response_index])?;
    let c_map = g_slope / (group.group_size() as f64 * group.sigma);
    let term_2 = w * c_map * stat_factor(adv, group.group_size()) * h_dir;

    Ok(RateDecomposition { term_1, term_2, total: term_1 + term_2 })
}

/// Central-difference probe of the same per-token gradient term: evaluates
/// `f'(r) * r * (dir . grad log pi) * adv` at `theta +- h * dir`, with the
/// response's metric riding the capability surface (direct path), and
/// differences the results. Independent of the closed forms above except
/// for the shared gate definition.
pub fn rate_decomposition_fd_probe(
    scenario: &SmoothScenario,
    direction: &[f64],
    response_index: usize,
    token_index: usize,
    h: f64,
) -> Result<f64, DynamicsError> {
    scenario.validate()?;
    let base_group = scenario.mapped_group()?;
    let base_adv = base_group.advantages[response_index];
    let tau = if base_adv > 0.0 { scenario.tau_pos } else { scenario.tau_neg };
    let metrics = scenario.metrics();
    let policy = &scenario.policy;
    let (h_base, _) = expected_capability_at(policy, &scenario.env, scenario.task, &policy.theta)?;

    let eval = |sign: f64| -> Result<f64, DynamicsError> {
        let theta: Vec<f64> =
            policy.theta.iter().zip(direction).map(|(t, d)| t + sign * h * d).collect();
        let r = scenario.token_ratio_at(&theta, response_index, token_index);
        let action = scenario.actions[response_index][token_index];
        let u = policy.dir_grad_logp(&theta, scenario.task, scenario.context, token_index, action, direction);
        // direct path: only this response's metric moves with capability
        let (h_eps, _) = expected_capability_at(policy, &scenario.env, scenario.task, &theta)?;
        let mut rewards = Vec::with_capacity(metrics.len());
        for (j, &x) in metrics.iter().enumerate() {
            let xj = if j == response_index { x + (h_eps - h_base) } else { x };
            rewards.push(scenario.mapping.map(xj)?);
        }
        let group = normalize_group(&rewards)?;
        Ok(gate_first(tau, r) * r * u * group.advantages[response_index])
    };
    Ok((eval(1.0)? - eval(-1.0)?) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricKind;
    use crate::sim::env::{EnvKind, GridSpan};
    use crate::sim::TaskEnv;

    fn mv(values: &[f64]) -> Vec<MetricValue> {
        values.iter().map(|&v| MetricValue::new(v, MetricKind::Iou).unwrap()).collect()
    }

    #[test]
    fn linear_profile_is_uniform() {
        // all entries bitwise equal under a linear mapping; the max/mean
        // statistic is exactly 1 for power-of-two group sizes
        let profile = sensitivity_profile(
            &mv(&[0.3, 0.55, 0.9, 0.2, 0.7, 0.1, 0.85, 0.6]),
            &RewardMapping::Identity,
        )
        .unwrap();
        let first = profile.values[0];
        assert!(profile.values.iter().all(|&v| v == first));
        assert_eq!(profile.max_over_mean(), 1.0);

        let odd = sensitivity_profile(&mv(&[0.1, 0.4, 0.9]), &RewardMapping::Identity).unwrap();
        assert!(odd.values.iter().all(|&v| v == odd.values[0]));
        assert!((odd.max_over_mean() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn convex_profile_peaks_at_best_metric() {
        let mapping = RewardMapping::Exponential { a: 3.0 };
        let profile = sensitivity_profile(&mv(&[0.2, 0.8]), &mapping).unwrap();
        // sigma cancels in the entry ratio: e^{3 * 0.6}
        let ratio = profile.values[1] / profile.values[0];
        assert!((ratio - (1.8f64).exp()).abs() < 1e-12);
        assert!(profile.values[1] > profile.values[0]);
    }

    #[test]
    fn degenerate_profile_rejected() {
        let err = sensitivity_profile(&mv(&[0.5, 0.5, 0.5]), &RewardMapping::Identity);
        assert!(matches!(err, Err(DynamicsError::GroupNorm(GroupNormError::DegenerateGroup))));
    }

    #[test]
    fn stat_factor_values() {
        assert_eq!(stat_factor(0.0, 8), 7.0);
        // sign-flip point: adv^2 = G - 1
        assert!(stat_factor((3.0f64).sqrt(), 4).abs() < 1e-15);
        assert!((stat_factor(1.5, 4) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn dominance_ratio_values() {
        assert_eq!(dominance_ratio(0.4, 0.4, 3.0), 1.0);
        assert!((dominance_ratio(0.9, 0.4, 3.0) - (1.5f64).exp()).abs() < 1e-12);
        assert!((dominance_ratio(0.4, 0.9, 3.0) - (-1.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn exponential_reward_gradient_ratio_is_exact() {
        // A'_i / A'_j = a e^{a x_i} H' / (a e^{a x_j} H') = e^{a (x_i - x_j)}
        let mapping = RewardMapping::Exponential { a: 3.0 };
        let (xi, xj) = (0.9, 0.4);
        let shared_h = 0.137;
        let gi = mapping.derivative(xi).unwrap() * shared_h;
        let gj = mapping.derivative(xj).unwrap() * shared_h;
        let rel = (gi / gj - dominance_ratio(xi, xj, 3.0)).abs() / dominance_ratio(xi, xj, 3.0);
        assert!(rel < 1e-14);
    }

    #[test]
    fn report_splits_and_sums() {
        let group = normalize_group(&[0.2, 0.5, 1.3, 0.9]).unwrap();
        let grads = [0.1, -0.3, 2.0, 0.4];
        let report = total_advantage_derivative_report(&group, &grads).unwrap();
        let direct =
            crate::group_norm::directional_advantage_derivative(&group, &grads).unwrap();
        for i in 0..4 {
            let sum = report.self_term[i] + report.cross_term[i];
            assert!((sum - direct[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn report_single_driver_has_infinite_dominance() {
        let group = normalize_group(&[0.1, 0.4, 0.9]).unwrap();
        // only the best response's reward moves
        let report = total_advantage_derivative_report(&group, &[0.0, 0.0, 1.0]).unwrap();
        assert!((report.cross_term[2]).abs() == 0.0);
        assert!(report.dominance_ratio.is_infinite());
    }

    #[test]
    fn report_uniform_grads_cancel() {
        let group = normalize_group(&[0.1, 0.4, 0.9, 0.3]).unwrap();
        let report = total_advantage_derivative_report(&group, &[0.7; 4]).unwrap();
        for i in 0..4 {
            assert!((report.self_term[i] + report.cross_term[i]).abs() < 1e-12);
        }
    }

    fn probe_scenario() -> SmoothScenario {
        let env = TaskEnv::new(
            "loc",
            EnvKind::IntervalGrid { resolution: 8, max_len: 3, targets: vec![GridSpan { start: 3, len: 2 }] },
        );
        let mut policy = PolicyModel::new(&[env.clone()], 1.0);
        for (i, t) in policy.theta.iter_mut().enumerate() {
            *t = (i as f64 * 0.23).sin() * 0.4;
        }
        policy.snapshot_old();
        // move off-policy a little so token ratios differ from 1
        for (i, t) in policy.theta.iter_mut().enumerate() {
            *t += (i as f64 * 0.41).cos() * 0.05;
        }
        SmoothScenario {
            env,
            policy,
            task: 0,
            context: 0,
            actions: vec![vec![3, 1], vec![0, 2], vec![5, 0], vec![2, 1]],
            mapping: RewardMapping::Exponential { a: 3.0 },
            tau_pos: 1.0,
            tau_neg: 1.5,
        }
    }

    #[test]
    fn rate_decomposition_matches_fd_probe() {
        let scenario = probe_scenario();
        let n = scenario.policy.param_count();
        let direction: Vec<f64> = {
            let raw: Vec<f64> = (0..n).map(|i| ((i * 13 + 5) as f64 * 0.29).sin()).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            raw.into_iter().map(|x| x / norm).collect()
        };
        for (resp, tok) in [(0usize, 0usize), (0, 1), (1, 0), (2, 1), (3, 0)] {
            let closed = rate_decomposition(&scenario, &direction, resp, tok).unwrap();
            let fd = rate_decomposition_fd_probe(&scenario, &direction, resp, tok, 1e-4).unwrap();
            let tol = (1e-3 * closed.total.abs()).max(1e-4);
            assert!(
                (closed.total - fd).abs() <= tol,
                "response {resp} token {tok}: closed {} vs fd {fd}",
                closed.total
            );
            assert_eq!(closed.total, closed.term_1 + closed.term_2);
        }
    }

    #[test]
    fn orthogonal_direction_gives_zero_total() {
        let scenario = probe_scenario();
        // a direction outside this task's parameter block cannot move
        // anything the term depends on; emulate by zeroing the block
        let direction = vec![0.0; scenario.policy.param_count()];
        let d = rate_decomposition(&scenario, &direction, 0, 0).unwrap();
        assert_eq!(d.total, 0.0);
    }

    #[test]
    fn step_mapping_rejected() {
        let mut scenario = probe_scenario();
        scenario.mapping = RewardMapping::Step { tau: 0.5 };
        assert!(matches!(
            rate_decomposition(&scenario, &vec![0.0; scenario.policy.param_count()], 0, 0),
            Err(DynamicsError::NonSmoothMapping(_))
        ));
    }
}
