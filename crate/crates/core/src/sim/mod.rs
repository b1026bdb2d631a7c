//! Deterministic toy multi-task training: environments, the softmax policy,
//! exact expected-capability evaluation, group sampling, and the training
//! loop.

pub mod env;
pub mod policy;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::objectives::{ObjectiveError, Response, ResponseGroup};
use crate::reward::{repetition_penalty, total_reward, RewardConfig, RewardError, RewardMapping};

pub use env::{EnvKind, GridPoint, GridSpan, TaskEnv};
pub use policy::PolicyModel;
pub use train::{train, DcaTraceRow, TraceRecord, TrainingTrace};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("action space has {outcomes} joint outcomes, above the exact-enumeration limit {limit}")]
    ActionSpaceTooLarge { outcomes: usize, limit: usize },
    #[error("environment '{env}' is invalid: {reason}")]
    InvalidEnv { env: String, reason: String },
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("context index {ctx} out of range for environment with {contexts} contexts")]
    ContextOutOfRange { ctx: usize, contexts: usize },
    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: u64 },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Exact expected capability of the policy on one environment: the mean
/// task metric over the policy's response distribution, averaged over
/// contexts, together with its exact parameter gradient.
///
/// Enumerates the joint action space; errors when that space exceeds
/// [`env::MAX_JOINT_OUTCOMES`].
pub fn expected_capability(
    policy: &PolicyModel,
    env: &TaskEnv,
    task: usize,
) -> Result<(f64, Vec<f64>), SimError> {
    expected_capability_at(policy, env, task, &policy.theta)
}

/// [`expected_capability`] under explicit parameters (used by directional
/// probes that evaluate the capability surface off the current iterate).
pub fn expected_capability_at(
    policy: &PolicyModel,
    env: &TaskEnv,
    task: usize,
    theta: &[f64],
) -> Result<(f64, Vec<f64>), SimError> {
    let outcomes = env.joint_outcomes();
    if outcomes > env::MAX_JOINT_OUTCOMES {
        return Err(SimError::ActionSpaceTooLarge { outcomes, limit: env::MAX_JOINT_OUTCOMES });
    }
    let sizes = env.position_sizes();
    let contexts = env.contexts();
    let inv_temp = 1.0 / policy.temperature;
    let mut h_total = 0.0;
    let mut grad = vec![0.0; policy.param_count()];
    for ctx in 0..contexts {
        let probs: Vec<Vec<f64>> =
            (0..sizes.len()).map(|pos| policy.probs_at(theta, task, ctx, pos)).collect();
        // E[M] and E[M * 1{y_pos = a}] in one enumeration pass.
        let mut h_ctx = 0.0;
        let mut cond: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        for actions in env::enumerate_actions(&sizes) {
            let mut p = 1.0;
            for (pos, &a) in actions.iter().enumerate() {
                p *= probs[pos][a];
            }
            let m = env.metric(ctx, &actions).value;
            let pm = p * m;
            h_ctx += pm;
            for (pos, &a) in actions.iter().enumerate() {
                cond[pos][a] += pm;
            }
        }
        h_total += h_ctx;
        // dH/dtheta[pos][a] = (E[M 1{y=a}] - pi(a) E[M]) / tau
        for (pos, block) in cond.iter().enumerate() {
            let range = policy.layout().block(task, ctx, pos);
            for (a, &c) in block.iter().enumerate() {
                grad[range.start + a] += (c - probs[pos][a] * h_ctx) * inv_temp;
            }
        }
    }
    let scale = 1.0 / contexts as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok((h_total * scale, grad))
}

/// Samples G responses for one context from the old-policy snapshot,
/// scores them through the reward stack, and normalizes the group.
///
/// Fully deterministic given the seed. Old log-probabilities come from the
/// frozen snapshot, new ones from the current parameters. For relaxed
/// mappings the continuous proxy is the old policy's probability of the
/// correct label, so rewards stay fixed data once sampled.
pub fn sample_group(
    policy: &PolicyModel,
    env: &TaskEnv,
    task: usize,
    mapping: &RewardMapping,
    ctx: usize,
    group_size: usize,
    seed: u64,
    reward_cfg: &RewardConfig,
) -> Result<ResponseGroup, SimError> {
    if group_size < 2 {
        return Err(SimError::GroupTooSmall(group_size));
    }
    if ctx >= env.contexts() {
        return Err(SimError::ContextOutOfRange { ctx, contexts: env.contexts() });
    }
    let sizes = env.position_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let old_probs: Vec<Vec<f64>> = (0..sizes.len()).map(|pos| policy.probs_old(task, ctx, pos)).collect();
    let proxy = env.proxy_target(ctx).map(|label| old_probs[0][label]);

    let mut responses = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let actions: Vec<usize> =
            old_probs.iter().map(|probs| sample_categorical(probs, &mut rng)).collect();
        let metric = env.metric(ctx, &actions);
        let r_task = match proxy {
            Some(p) => mapping.map_with_proxy(metric.value, p)?,
            None => mapping.map_with_proxy(metric.value, 0.0)?,
        };
        // Grid actions carry no text, so the format bonus is always absent;
        // the repetition penalty runs on the action tokens (zero for
        // responses shorter than the n-gram order).
        let r_rep = repetition_penalty(&actions, reward_cfg.ngram_n, reward_cfg.lambda_pen);
        let reward = total_reward(r_task, 0.0, r_rep);
        let new_logps: Vec<f64> =
            actions.iter().enumerate().map(|(pos, &a)| policy.logp(task, ctx, pos, a)).collect();
        let old_logps: Vec<f64> =
            actions.iter().enumerate().map(|(pos, &a)| policy.logp_old(task, ctx, pos, a)).collect();
        responses.push(Response {
            actions,
            new_logps,
            old_logps,
            metric,
            reward,
        });
    }
    let kl = policy.reference_theta.as_ref().map(|_| policy.kl_to_reference(task, ctx).unwrap());
    Ok(ResponseGroup::new(task, ctx, responses, kl)?)
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Recomputes the batch's new-policy log-probabilities (and KL values, when
/// a reference is frozen) under the policy's current parameters. Actions,
/// old log-probabilities, metrics, rewards, and advantages are fixed data.
pub fn refresh_batch(batch: &mut crate::objectives::Batch, policy: &PolicyModel) {
    for group in &mut batch.groups {
        for resp in &mut group.responses {
            for (pos, &a) in resp.actions.iter().enumerate() {
                resp.new_logps[pos] = policy.logp(group.task, group.context, pos, a);
            }
        }
        if group.kl_to_reference.is_some() {
            group.kl_to_reference = policy.kl_to_reference(group.task, group.context);
        }
    }
}

/// Splitmix-style mixer deriving per-(step, task) sampling seeds from the
/// master seed; keeps every run reproducible without sharing RNG state.
pub fn derive_seed(master: u64, step: u64, task: u64) -> u64 {
    let mut z = master
        .wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(task.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
