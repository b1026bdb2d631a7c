//! Group-relative advantage normalization and its exact Jacobian.
//!
//! Rewards sampled for one query are z-scored against their own group:
//! `adv_i = (A_i - mu) / sigma` with the *population* standard deviation
//! (divide by G). The population form matters: the closed-form sensitivities
//!
//! - self:  `d adv_i / d A_i = ((G-1) - adv_i^2) / (G sigma)`
//! - cross: `d adv_i / d A_j = -(1 + adv_i adv_j) / (G sigma)` for `j != i`
//!
//! hold only under it. Groups whose rewards are (nearly) all equal carry no
//! learning signal; they are flagged degenerate and their advantages zeroed.

use thiserror::Error;

/// Default variance floor below which a group counts as degenerate.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GroupNormError {
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("degenerate group: reward standard deviation below floor")]
    DegenerateGroup,
}

/// A reward group with its normalized advantages and statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGroup {
    /// Raw rewards `A_i`.
    pub raw: Vec<f64>,
    /// Normalized advantages; all zero when degenerate.
    pub advantages: Vec<f64>,
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub degenerate: bool,
}

impl NormalizedGroup {
    pub fn group_size(&self) -> usize {
        self.raw.len()
    }
}

/// Normalizes a reward group with the default sigma floor.
pub fn normalize_group(rewards: &[f64]) -> Result<NormalizedGroup, GroupNormError> {
    normalize_group_with_floor(rewards, SIGMA_FLOOR)
}

pub fn normalize_group_with_floor(
    rewards: &[f64],
    sigma_floor: f64,
) -> Result<NormalizedGroup, GroupNormError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GroupNormError::GroupTooSmall(g));
    }
    let mu = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / g as f64;
    let sigma = var.sqrt();
    let degenerate = sigma < sigma_floor;
    let advantages = if degenerate {
        vec![0.0; g]
    } else {
        rewards.iter().map(|a| (a - mu) / sigma).collect()
    };
    Ok(NormalizedGroup { raw: rewards.to_vec(), advantages, mu, sigma, degenerate })
}

/// Exact Jacobian `J[i][j] = d adv_i / d A_j` of the normalization.
pub fn advantage_jacobian(group: &NormalizedGroup) -> Result<Vec<Vec<f64>>, GroupNormError> {
    if group.degenerate {
        return Err(GroupNormError::DegenerateGroup);
    }
    let g = group.group_size() as f64;
    let scale = 1.0 / (g * group.sigma);
    let adv = &group.advantages;
    let jac = adv
        .iter()
        .enumerate()
        .map(|(i, &ai)| {
            adv.iter()
                .enumerate()
                .map(|(j, &aj)| {
                    if i == j {
                        scale * ((g - 1.0) - ai * ai)
                    } else {
                        -scale * (1.0 + ai * aj)
                    }
                })
                .collect()
        })
        .collect();
    Ok(jac)
}

/// Total derivative of the advantages along a direction of reward change:
/// `d adv_i = self_term_i - cross_term_i` with the closed forms above, i.e.
/// the product `J * reward_grads` without materializing the matrix.
pub fn directional_advantage_derivative(
    group: &NormalizedGroup,
    reward_grads: &[f64],
) -> Result<Vec<f64>, GroupNormError> {
    let (self_term, cross_term) = advantage_derivative_terms(group, reward_grads)?;
    Ok(self_term.iter().zip(&cross_term).map(|(s, c)| s + c).collect())
}

/// The self and cross components of the total derivative, separately.
/// `self_term_i = ((G-1) - adv_i^2) A'_i / (G sigma)`;
/// `cross_term_i = -sum_{j != i} (1 + adv_i adv_j) A'_j / (G sigma)`.
pub fn advantage_derivative_terms(
    group: &NormalizedGroup,
    reward_grads: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), GroupNormError> {
    if group.degenerate {
        return Err(GroupNormError::DegenerateGroup);
    }
    assert_eq!(
        reward_grads.len(),
        group.group_size(),
        "reward gradient vector must match the group size"
    );
    let g = group.group_size() as f64;
    let scale = 1.0 / (g * group.sigma);
    let adv = &group.advantages;
    let mut self_term = Vec::with_capacity(adv.len());
    let mut cross_term = Vec::with_capacity(adv.len());
    for (i, &ai) in adv.iter().enumerate() {
        self_term.push(scale * ((g - 1.0) - ai * ai) * reward_grads[i]);
        let mut cross = 0.0;
        for (j, &aj) in adv.iter().enumerate() {
            if j != i {
                cross += (1.0 + ai * aj) * reward_grads[j];
            }
        }
        cross_term.push(-scale * cross);
    }
    Ok((self_term, cross_term))
}
