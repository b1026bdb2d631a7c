//! Reward shaping: the metric-to-reward mappings `g_k`, their derivatives,
//! the continuous relaxation for discrete metrics, and the composite reward
//! `R = R_task + R_fmt + R_rep`.
//!
//! The mapping family is the lever that controls gradient amplification for
//! superior responses: a convex mapping steepens with the metric, so the
//! best response in a group earns a disproportionately large reward slope.

use std::collections::HashSet;
use std::hash::Hash;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("input {x} outside the domain of {mapping}: ratio mappings require x in [0, 1]")]
    DomainError { mapping: String, x: f64 },
    #[error("step mapping is not differentiable at its threshold x = {0}")]
    StepSingularity(f64),
    #[error("relaxed mapping needs a continuous proxy; use map_with_proxy")]
    ProxyRequired,
    #[error("invalid mapping: {0}")]
    InvalidMapping(String),
}

/// Metric-to-reward mapping `g`.
///
/// - `Identity`: `g(x) = x` (classification confidence passes through).
/// - `Exponential(a)`: `g(x) = e^{a x}`, slope steepens with the metric.
/// - `NormalizedExponential(alpha)`: `(e^{alpha x} - 1) / (e^{alpha} - 1)`,
///   the exponential rescaled to hit 0 and 1 at the endpoints.
/// - `Step(tau)`: indicator `x >= tau`; differentiable nowhere useful, kept
///   for contrast with the smooth mappings.
/// - `Relaxed(lambda, inner)`: applies `inner` to the relaxed metric
///   `x + lambda * proxy`, turning a discrete metric into a dense one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardMapping {
    Identity,
    Exponential { a: f64 },
    NormalizedExponential { alpha: f64 },
    Step { tau: f64 },
    Relaxed { lambda: f64, inner: Box<RewardMapping> },
}

impl RewardMapping {
    /// Checks the variant's parameter invariants.
    pub fn validate(&self) -> Result<(), RewardError> {
        match self {
            RewardMapping::Identity => Ok(()),
            RewardMapping::Exponential { a } if *a > 0.0 => Ok(()),
            RewardMapping::Exponential { a } => {
                Err(RewardError::InvalidMapping(format!("exponential needs a > 0, got {a}")))
            }
            RewardMapping::NormalizedExponential { alpha } if *alpha > 0.0 => Ok(()),
            RewardMapping::NormalizedExponential { alpha } => Err(RewardError::InvalidMapping(
                format!("normalized exponential needs alpha > 0, got {alpha}"),
            )),
            RewardMapping::Step { tau } if (0.0..=1.0).contains(tau) => Ok(()),
            RewardMapping::Step { tau } => {
                Err(RewardError::InvalidMapping(format!("step needs tau in [0, 1], got {tau}")))
            }
            RewardMapping::Relaxed { lambda, inner } => {
                if *lambda < 0.0 {
                    return Err(RewardError::InvalidMapping(format!(
                        "relaxed needs lambda >= 0, got {lambda}"
                    )));
                }
                if matches!(**inner, RewardMapping::Relaxed { .. }) {
                    return Err(RewardError::InvalidMapping(
                        "relaxed mappings do not nest".into(),
                    ));
                }
                inner.validate()
            }
        }
    }

    fn check_domain(&self, x: f64) -> Result<(), RewardError> {
        let in_unit = (0.0..=1.0).contains(&x);
        match self {
            RewardMapping::NormalizedExponential { .. } if !in_unit => {
                Err(RewardError::DomainError { mapping: "normalized_exponential".into(), x })
            }
            RewardMapping::Step { .. } if !in_unit => {
                Err(RewardError::DomainError { mapping: "step".into(), x })
            }
            _ => Ok(()),
        }
    }

    /// Maps a metric to a raw reward. Relaxed mappings error here; they need
    /// the proxy, see [`RewardMapping::map_with_proxy`].
    pub fn map(&self, x: f64) -> Result<f64, RewardError> {
        self.check_domain(x)?;
        match self {
            RewardMapping::Identity => Ok(x),
            RewardMapping::Exponential { a } => Ok((a * x).exp()),
            RewardMapping::NormalizedExponential { alpha } => {
                Ok(((alpha * x).exp() - 1.0) / (alpha.exp() - 1.0))
            }
            RewardMapping::Step { tau } => Ok(if x >= *tau { 1.0 } else { 0.0 }),
            RewardMapping::Relaxed { .. } => Err(RewardError::ProxyRequired),
        }
    }

    /// Maps a metric with a continuous proxy. Non-relaxed variants ignore
    /// the proxy; `Relaxed` applies its inner mapping to `x + lambda * proxy`.
    pub fn map_with_proxy(&self, x: f64, proxy: f64) -> Result<f64, RewardError> {
        match self {
            RewardMapping::Relaxed { lambda, inner } => inner.map(relax_metric(x, proxy, *lambda)),
            other => other.map(x),
        }
    }

    /// Derivative `g'(x)`. The step mapping returns 0 away from its
    /// threshold and errors exactly at it.
    pub fn derivative(&self, x: f64) -> Result<f64, RewardError> {
        self.check_domain(x)?;
        match self {
            RewardMapping::Identity => Ok(1.0),
            RewardMapping::Exponential { a } => Ok(a * (a * x).exp()),
            RewardMapping::NormalizedExponential { alpha } => {
                Ok(alpha * (alpha * x).exp() / (alpha.exp() - 1.0))
            }
            RewardMapping::Step { tau } => {
                if x == *tau {
                    Err(RewardError::StepSingularity(*tau))
                } else {
                    Ok(0.0)
                }
            }
            RewardMapping::Relaxed { .. } => Err(RewardError::ProxyRequired),
        }
    }

    /// Derivative of a relaxed mapping with respect to the base metric,
    /// i.e. the inner derivative evaluated at the relaxed point.
    pub fn derivative_with_proxy(&self, x: f64, proxy: f64) -> Result<f64, RewardError> {
        match self {
            RewardMapping::Relaxed { lambda, inner } => {
                inner.derivative(relax_metric(x, proxy, *lambda))
            }
            other => other.derivative(x),
        }
    }
}

/// Continuous relaxation of a discrete metric: `x + lambda * proxy`.
pub fn relax_metric(x: f64, proxy: f64, lambda: f64) -> f64 {
    x + lambda * proxy
}

/// Default constants for the composite reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// N-gram order for the repetition penalty.
    pub ngram_n: usize,
    /// Maximum (most negative) repetition penalty.
    pub lambda_pen: f64,
    /// Bonus granted for a well-formed response.
    pub format_bonus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { ngram_n: 3, lambda_pen: -1.0, format_bonus: 0.2 }
    }
}

static FORMAT_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)^<think>.*</think><answer>.*</answer>$").unwrap());

/// Format-compliance reward: the bonus iff the text matches
/// `<think>...</think><answer>...</answer>` exactly, with no leading or
/// trailing characters; 0 otherwise.
pub fn format_reward(text: &str) -> f64 {
    format_reward_with(text, &RewardConfig::default())
}

pub fn format_reward_with(text: &str, cfg: &RewardConfig) -> f64 {
    if FORMAT_PATTERN.is_match(text) {
        cfg.format_bonus
    } else {
        0.0
    }
}

/// N-gram repetition penalty: `lambda_pen * (1 - unique/total)` over the
/// contiguous n-grams of the sequence; 0 when no n-gram exists. Uniqueness
/// uses exact sequence equality so penalties are bit-reproducible.
pub fn repetition_penalty<T: Eq + Hash>(tokens: &[T], n: usize, lambda_pen: f64) -> f64 {
    assert!(n >= 1, "n-gram order must be at least 1");
    if tokens.len() < n {
        return 0.0;
    }
    let total = tokens.len() - n + 1;
    let unique: HashSet<&[T]> = tokens.windows(n).collect();
    lambda_pen * (1.0 - unique.len() as f64 / total as f64)
}

/// The composite reward and its components. `total` is the exact sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_task: f64,
    pub r_fmt: f64,
    pub r_rep: f64,
    pub total: f64,
}

/// Assembles the composite reward `R = R_task + R_fmt + R_rep`.
pub fn total_reward(r_task: f64, r_fmt: f64, r_rep: f64) -> RewardBreakdown {
    RewardBreakdown { r_task, r_fmt, r_rep, total: r_task + r_fmt + r_rep }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Frozen from a high-precision scalar oracle for (e^{1.5}-1)/(e^3-1)
    // and 3 e^{1.5}/(e^3-1).
    const NORMEXP3_MID: f64 = 0.18242552380635634;
    const NORMEXP3_MID_DERIV: f64 = 0.7044636608928369;

    #[test]
    fn normalized_exponential_values() {
        let g = RewardMapping::NormalizedExponential { alpha: 3.0 };
        assert_eq!(g.map(1.0).unwrap(), 1.0);
        assert_eq!(g.map(0.0).unwrap(), 0.0);
        assert!((g.map(0.5).unwrap() - NORMEXP3_MID).abs() < 1e-15);
    }

    #[test]
    fn derivatives() {
        assert_eq!(RewardMapping::Identity.derivative(0.37).unwrap(), 1.0);
        assert_eq!(RewardMapping::Exponential { a: 3.0 }.derivative(0.0).unwrap(), 3.0);
        let g = RewardMapping::NormalizedExponential { alpha: 3.0 };
        assert!((g.derivative(0.5).unwrap() - NORMEXP3_MID_DERIV).abs() < 1e-15);
    }

    #[test]
    fn step_mapping() {
        let g = RewardMapping::Step { tau: 0.6 };
        assert_eq!(g.map(0.59).unwrap(), 0.0);
        assert_eq!(g.map(0.6).unwrap(), 1.0); // threshold uses >=
        assert_eq!(g.map(0.9).unwrap(), 1.0);
        assert_eq!(g.derivative(0.5).unwrap(), 0.0);
        assert_eq!(g.derivative(0.6), Err(RewardError::StepSingularity(0.6)));
    }

    #[test]
    fn domain_errors() {
        let g = RewardMapping::NormalizedExponential { alpha: 3.0 };
        assert!(matches!(g.map(1.5), Err(RewardError::DomainError { .. })));
        assert!(matches!(g.map(-0.1), Err(RewardError::DomainError { .. })));
        // Identity and Exponential accept any real.
        assert_eq!(RewardMapping::Identity.map(-2.0).unwrap(), -2.0);
        assert!(RewardMapping::Exponential { a: 1.0 }.map(1.5).is_ok());
    }

    #[test]
    fn relaxation() {
        assert_eq!(relax_metric(0.0, 0.3, 0.0), 0.0);
        assert_eq!(relax_metric(1.0, 0.0, 0.5), 1.0);
        assert!((relax_metric(0.0, 0.6, 0.5) - 0.3).abs() < 1e-15);

        let relaxed = RewardMapping::Relaxed {
            lambda: 0.5,
            inner: Box::new(RewardMapping::Exponential { a: 3.0 }),
        };
        relaxed.validate().unwrap();
        let expect = (3.0f64 * 0.3).exp();
        assert!((relaxed.map_with_proxy(0.0, 0.6).unwrap() - expect).abs() < 1e-15);
        assert_eq!(relaxed.map(0.5), Err(RewardError::ProxyRequired));
    }

    #[test]
    fn relaxed_does_not_nest() {
        let bad = RewardMapping::Relaxed {
            lambda: 0.5,
            inner: Box::new(RewardMapping::Relaxed {
                lambda: 0.1,
                inner: Box::new(RewardMapping::Identity),
            }),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn format_reward_pattern() {
        assert_eq!(format_reward("<think>abc</think><answer>x</answer>"), 0.2);
        assert_eq!(format_reward("<think>abc</think><answer>x</answer> "), 0.0);
        assert_eq!(format_reward(" <think>abc</think><answer>x</answer>"), 0.0);
        assert_eq!(format_reward("<answer>x</answer>"), 0.0);
        assert_eq!(format_reward("<think>a\nb</think><answer>multi\nline</answer>"), 0.2);
        assert_eq!(format_reward("<think></think><answer></answer>"), 0.2);
        assert_eq!(format_reward("<answer>x</answer><think>abc</think>"), 0.0);
    }

    #[test]
    fn repetition_penalty_values() {
        // all 3-grams distinct
        assert_eq!(repetition_penalty(&[1, 2, 3, 4, 5], 3, -1.0), 0.0);
        // [a,b,a,b,a,b]: T = 4, unique = {(a,b,a), (b,a,b)} = 2
        let toks = ["a", "b", "a", "b", "a", "b"];
        assert_eq!(repetition_penalty(&toks, 3, -1.0), -0.5);
        // shorter than n: no n-grams
        assert_eq!(repetition_penalty(&[1, 2], 3, -1.0), 0.0);
    }

    #[test]
    fn total_reward_sums() {
        let b = total_reward(1.0, 0.2, 0.0);
        assert_eq!(b.total, 1.2);
        // Frozen oracle value: normexp3 midpoint + 0.2 - 0.5.
        let b = total_reward(NORMEXP3_MID, 0.2, -0.5);
        assert!((b.total - (-0.11757447619364366)).abs() < 1e-15);
        assert_eq!(total_reward(0.0, 0.0, 0.0).total, 0.0);
    }

    fn smooth_mappings() -> Vec<RewardMapping> {
        vec![
            RewardMapping::Identity,
            RewardMapping::Exponential { a: 3.0 },
            RewardMapping::Exponential { a: 1.0 },
            RewardMapping::NormalizedExponential { alpha: 3.0 },
            RewardMapping::NormalizedExponential { alpha: 0.5 },
        ]
    }

    #[test]
    fn derivative_matches_finite_difference() {
        // Central difference at 100 deterministic points per smooth variant.
        let h = 1e-6;
        for g in smooth_mappings() {
            for i in 0..100 {
                let x = 0.001 + 0.998 * (i as f64 / 99.0);
                let fd = (g.map(x + h).unwrap() - g.map(x - h).unwrap()) / (2.0 * h);
                let an = g.derivative(x).unwrap();
                let rel = (an - fd).abs() / fd.abs().max(1e-12);
                assert!(rel < 1e-6, "{g:?} at {x}: analytic {an} vs fd {fd}");
            }
        }
    }

    #[test]
    fn convex_mappings_have_increasing_derivative() {
        for g in [
            RewardMapping::Exponential { a: 1.0 },
            RewardMapping::Exponential { a: 3.0 },
            RewardMapping::NormalizedExponential { alpha: 3.0 },
        ] {
            let mut prev = g.derivative(0.0).unwrap();
            for i in 1..=50 {
                let x = i as f64 / 50.0;
                let cur = g.derivative(x).unwrap();
                assert!(cur > prev, "{g:?} derivative not strictly increasing at {x}");
                prev = cur;
            }
        }
    }

    proptest! {
        #[test]
        fn mappings_monotone_on_unit(x1 in 0.0..=1.0f64, x2 in 0.0..=1.0f64) {
            let (lo, hi) = (x1.min(x2), x1.max(x2));
            for g in smooth_mappings().into_iter().chain([RewardMapping::Step { tau: 0.5 }]) {
                prop_assert!(g.map(lo).unwrap() <= g.map(hi).unwrap());
            }
        }

        #[test]
        fn normalized_exponential_endpoints(alpha in 0.01..20.0f64) {
            let g = RewardMapping::NormalizedExponential { alpha };
            prop_assert_eq!(g.map(0.0).unwrap(), 0.0);
            prop_assert_eq!(g.map(1.0).unwrap(), 1.0);
        }

        #[test]
        fn penalty_bounded(
            tokens in proptest::collection::vec(0u8..4, 0..30),
            n in 1usize..5,
            lambda in -3.0..=0.0f64,
        ) {
            let p = repetition_penalty(&tokens, n, lambda);
            prop_assert!(p <= 0.0 && p >= lambda);
        }
    }
}
