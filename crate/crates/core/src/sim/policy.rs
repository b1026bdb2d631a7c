//! Toy softmax policy over factored categorical action spaces.
//!
//! Parameters are logits, one block per (task, context, position); a
//! response factorizes as independent per-position categoricals at a
//! sampling temperature. Everything the surrogate-objective math needs is
//! available in closed form: log-probabilities, their parameter gradients,
//! directional Hessians, and the exact KL to a frozen reference.

use super::env::TaskEnv;

/// Offsets of each (task, context, position) logit block in the flat
/// parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    tasks: Vec<TaskBlock>,
    total: usize,
}

#[derive(Debug, Clone)]
struct TaskBlock {
    offset: usize,
    contexts: usize,
    pos_sizes: Vec<usize>,
    pos_offsets: Vec<usize>,
    ctx_stride: usize,
}

impl ParamLayout {
    pub fn new(envs: &[TaskEnv]) -> Self {
        let mut tasks = Vec::with_capacity(envs.len());
        let mut offset = 0;
        for env in envs {
            let pos_sizes = env.position_sizes();
            let mut pos_offsets = Vec::with_capacity(pos_sizes.len());
            let mut stride = 0;
            for &s in &pos_sizes {
                pos_offsets.push(stride);
                stride += s;
            }
            let contexts = env.contexts();
            tasks.push(TaskBlock { offset, contexts, pos_sizes, pos_offsets, ctx_stride: stride });
            offset += contexts * stride;
        }
        Self { tasks, total: offset }
    }

    pub fn total_params(&self) -> usize {
        self.total
    }

    pub fn position_count(&self, task: usize) -> usize {
        self.tasks[task].pos_sizes.len()
    }

    pub fn position_size(&self, task: usize, pos: usize) -> usize {
        self.tasks[task].pos_sizes[pos]
    }

    /// Flat index range of one logit block.
    pub fn block(&self, task: usize, ctx: usize, pos: usize) -> std::ops::Range<usize> {
        let t = &self.tasks[task];
        debug_assert!(ctx < t.contexts && pos < t.pos_sizes.len());
        let start = t.offset + ctx * t.ctx_stride + t.pos_offsets[pos];
        start..start + t.pos_sizes[pos]
    }
}

/// Softmax policy with a frozen old-policy snapshot and an optional frozen
/// reference for KL regularization.
#[derive(Debug, Clone)]
pub struct PolicyModel {
    pub theta: Vec<f64>,
    pub temperature: f64,
    pub old_theta: Vec<f64>,
    pub reference_theta: Option<Vec<f64>>,
    layout: ParamLayout,
}

impl PolicyModel {
    /// Zero-initialized (uniform) policy over the given environments.
    pub fn new(envs: &[TaskEnv], temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        let layout = ParamLayout::new(envs);
        let theta = vec![0.0; layout.total_params()];
        Self { old_theta: theta.clone(), theta, temperature, reference_theta: None, layout }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_params()
    }

    /// Freezes the current parameters as the rollout (old) policy.
    pub fn snapshot_old(&mut self) {
        self.old_theta.copy_from_slice(&self.theta);
    }

    /// Freezes the current parameters as the KL reference.
    pub fn freeze_reference(&mut self) {
        self.reference_theta = Some(self.theta.clone());
    }

    /// Probabilities of one categorical block under explicit parameters.
    pub fn probs_at(&self, theta: &[f64], task: usize, ctx: usize, pos: usize) -> Vec<f64> {
        let block = &theta[self.layout.block(task, ctx, pos)];
        let inv_t = 1.0 / self.temperature;
        let max = block.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z * inv_t));
        let exps: Vec<f64> = block.iter().map(|&z| (z * inv_t - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn probs(&self, task: usize, ctx: usize, pos: usize) -> Vec<f64> {
        self.probs_at(&self.theta, task, ctx, pos)
    }

    pub fn probs_old(&self, task: usize, ctx: usize, pos: usize) -> Vec<f64> {
        self.probs_at(&self.old_theta, task, ctx, pos)
    }

    /// Log-probability of one action under explicit parameters.
    pub fn logp_at(&self, theta: &[f64], task: usize, ctx: usize, pos: usize, action: usize) -> f64 {
        let block = &theta[self.layout.block(task, ctx, pos)];
        let inv_t = 1.0 / self.temperature;
        let max = block.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z * inv_t));
        let log_sum = block.iter().map(|&z| (z * inv_t - max).exp()).sum::<f64>().ln() + max;
        block[action] * inv_t - log_sum
    }

    pub fn logp(&self, task: usize, ctx: usize, pos: usize, action: usize) -> f64 {
        self.logp_at(&self.theta, task, ctx, pos, action)
    }

    pub fn logp_old(&self, task: usize, ctx: usize, pos: usize, action: usize) -> f64 {
        self.logp_at(&self.old_theta, task, ctx, pos, action)
    }

    /// Accumulates `scale * grad log pi_theta(action)` into `out`.
    /// For softmax logits: `d log pi(a) / d theta_b = (1[b=a] - pi_b) / tau`.
    pub fn add_grad_logp(
        &self,
        task: usize,
        ctx: usize,
        pos: usize,
        action: usize,
        scale: f64,
        out: &mut [f64],
    ) {
        let probs = self.probs(task, ctx, pos);
        let range = self.layout.block(task, ctx, pos);
        let inv_t = 1.0 / self.temperature;
        for (b, p) in probs.iter().enumerate() {
            let indicator = if b == action { 1.0 } else { 0.0 };
            out[range.start + b] += scale * (indicator - p) * inv_t;
        }
    }

    /// Directional derivative `dir . grad log pi(action)` under explicit
    /// parameters: `(dir_a - E_pi[dir]) / tau` over the block.
    pub fn dir_grad_logp(
        &self,
        theta: &[f64],
        task: usize,
        ctx: usize,
        pos: usize,
        action: usize,
        dir: &[f64],
    ) -> f64 {
        let probs = self.probs_at(theta, task, ctx, pos);
        let range = self.layout.block(task, ctx, pos);
        let mean: f64 = probs.iter().enumerate().map(|(b, p)| p * dir[range.start + b]).sum();
        (dir[range.start + action] - mean) / self.temperature
    }

    /// Directional Hessian `dir^T (grad^2 log pi) dir = -Var_pi(dir) / tau^2`.
    /// The log-softmax Hessian is action-independent.
    pub fn dir_hessian_logp(
        &self,
        theta: &[f64],
        task: usize,
        ctx: usize,
        pos: usize,
        dir: &[f64],
    ) -> f64 {
        let probs = self.probs_at(theta, task, ctx, pos);
        let range = self.layout.block(task, ctx, pos);
        let mut mean = 0.0;
        let mut mean_sq = 0.0;
        for (b, p) in probs.iter().enumerate() {
            let d = dir[range.start + b];
            mean += p * d;
            mean_sq += p * d * d;
        }
        -(mean_sq - mean * mean) / (self.temperature * self.temperature)
    }

    /// Exact KL(pi_theta || pi_reference) for one context, summed over the
    /// factored positions. `None` when no reference is frozen.
    pub fn kl_to_reference(&self, task: usize, ctx: usize) -> Option<f64> {
        let reference = self.reference_theta.as_ref()?;
        Some(self.kl_at(&self.theta, reference, task, ctx))
    }

    pub fn kl_at(&self, theta: &[f64], reference: &[f64], task: usize, ctx: usize) -> f64 {
        let mut kl = 0.0;
        for pos in 0..self.layout.position_count(task) {
            let p = self.probs_at(theta, task, ctx, pos);
            let size = self.layout.position_size(task, pos);
            for a in 0..size {
                let lp = self.logp_at(theta, task, ctx, pos, a);
                let lr = self.logp_at(reference, task, ctx, pos, a);
                kl += p[a] * (lp - lr);
            }
        }
        kl
    }

    /// Accumulates `scale * grad_theta KL(pi_theta || pi_ref)` for one
    /// context into `out`. Per block: `dKL/dtheta_b =
    /// pi_b (log(pi_b/rho_b) - KL_block) / tau`.
    pub fn add_kl_grad(&self, task: usize, ctx: usize, scale: f64, out: &mut [f64]) {
        let reference = self
            .reference_theta
            .as_ref()
            .expect("add_kl_grad requires a frozen reference policy");
        let inv_t = 1.0 / self.temperature;
        for pos in 0..self.layout.position_count(task) {
            let probs = self.probs(task, ctx, pos);
            let range = self.layout.block(task, ctx, pos);
            let size = probs.len();
            let mut log_ratio = Vec::with_capacity(size);
            let mut kl_block = 0.0;
            for a in 0..size {
                let lr = self.logp_at(&self.theta, task, ctx, pos, a)
                    - self.logp_at(reference, task, ctx, pos, a);
                log_ratio.push(lr);
                kl_block += probs[a] * lr;
            }
            for a in 0..size {
                out[range.start + a] += scale * probs[a] * (log_ratio[a] - kl_block) * inv_t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::env::{EnvKind, TaskEnv};

    fn two_task_policy() -> PolicyModel {
        let envs = vec![
            TaskEnv::new("cls", EnvKind::ClassificationBandit { num_labels: 3, targets: vec![1, 2] }),
            TaskEnv::new(
                "loc",
                EnvKind::IntervalGrid {
                    resolution: 4,
                    max_len: 2,
                    targets: vec![crate::sim::env::GridSpan { start: 1, len: 2 }],
                },
            ),
        ];
        PolicyModel::new(&envs, 1.0)
    }

    #[test]
    fn layout_blocks_are_disjoint_and_cover() {
        let policy = two_task_policy();
        // task 0: 2 contexts x 1 position x 3 = 6; task 1: 1 ctx x (4 + 2) = 6
        assert_eq!(policy.param_count(), 12);
        let mut seen = vec![false; 12];
        for (task, ctx, pos) in [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 0, 1)] {
            for i in policy.layout().block(task, ctx, pos) {
                assert!(!seen[i], "overlapping blocks at {i}");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn uniform_at_zero_init() {
        let policy = two_task_policy();
        let p = policy.probs(0, 0, 0);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((policy.logp(0, 0, 0, 2) - (1.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn grad_logp_matches_finite_difference() {
        let mut policy = two_task_policy();
        for (i, t) in policy.theta.iter_mut().enumerate() {
            *t = (i as f64 * 0.37).sin();
        }
        let n = policy.param_count();
        let mut grad = vec![0.0; n];
        policy.add_grad_logp(1, 0, 0, 2, 1.0, &mut grad);
        let h = 1e-6;
        for k in 0..n {
            let mut tp = policy.theta.clone();
            tp[k] += h;
            let mut tm = policy.theta.clone();
            tm[k] -= h;
            let fd = (policy.logp_at(&tp, 1, 0, 0, 2) - policy.logp_at(&tm, 1, 0, 0, 2)) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-8, "param {k}: {} vs {}", grad[k], fd);
        }
    }

    #[test]
    fn dir_hessian_matches_finite_difference() {
        let mut policy = two_task_policy();
        for (i, t) in policy.theta.iter_mut().enumerate() {
            *t = (i as f64 * 0.71).cos() * 0.5;
        }
        policy.temperature = 0.8;
        let n = policy.param_count();
        let dir: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) as f64 * 0.13).sin()).collect();
        let h = 1e-5;
        let theta_p: Vec<f64> = policy.theta.iter().zip(&dir).map(|(t, d)| t + h * d).collect();
        let theta_m: Vec<f64> = policy.theta.iter().zip(&dir).map(|(t, d)| t - h * d).collect();
        let fd = (policy.dir_grad_logp(&theta_p, 1, 0, 0, 1, &dir)
            - policy.dir_grad_logp(&theta_m, 1, 0, 0, 1, &dir))
            / (2.0 * h);
        let analytic = policy.dir_hessian_logp(&policy.theta, 1, 0, 0, &dir);
        assert!((analytic - fd).abs() < 1e-7, "{analytic} vs {fd}");
    }

    #[test]
    fn kl_zero_against_self_and_grad_matches_fd() {
        let mut policy = two_task_policy();
        policy.freeze_reference();
        assert_eq!(policy.kl_to_reference(0, 0), Some(0.0));

        // move theta away from the reference; KL must be positive
        for (i, t) in policy.theta.iter_mut().enumerate() {
            *t += (i as f64 * 0.19).sin() * 0.4;
        }
        let kl = policy.kl_to_reference(1, 0).unwrap();
        assert!(kl > 0.0);

        let n = policy.param_count();
        let mut grad = vec![0.0; n];
        policy.add_kl_grad(1, 0, 1.0, &mut grad);
        let reference = policy.reference_theta.clone().unwrap();
        let h = 1e-6;
        for k in 0..n {
            let mut tp = policy.theta.clone();
            tp[k] += h;
            let mut tm = policy.theta.clone();
            tm[k] -= h;
            let fd =
                (policy.kl_at(&tp, &reference, 1, 0) - policy.kl_at(&tm, &reference, 1, 0)) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-8, "param {k}: {} vs {}", grad[k], fd);
        }
    }
}
