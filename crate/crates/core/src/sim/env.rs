//! Deterministic toy task environments.
//!
//! Each environment is a small factored categorical bandit: a response is a
//! short fixed-length tuple of categorical choices, and every choice tuple
//! has an exactly computable metric against the context's hidden target.
//! Action spaces stay small enough to enumerate, so the expected capability
//! (mean metric under the policy) and its gradient are exact — no sampling
//! noise anywhere in the verification path.
//!
//! Difficulty is a grid-resolution knob: at resolution `R` only a handful
//! of candidates overlap the target, so a near-uniform policy starts at
//! expected metric `O(1/R)` with a correspondingly flat capability
//! landscape. That is the plateau regime the localization tasks live in.

use serde::{Deserialize, Serialize};

use crate::metrics::{
    accuracy_indicator, iou_box, span_f1, tiou_interval, Box2D, Interval, MetricKind, MetricValue,
    TaskKind, TokenIndexSet,
};

use super::SimError;

/// Largest joint action space we are willing to enumerate exactly.
pub const MAX_JOINT_OUTCOMES: usize = 1_000_000;

/// A grid span: `len` cells starting at cell `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpan {
    pub start: usize,
    pub len: usize,
}

/// A grid cell position for box targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub col: usize,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvKind {
    /// Pick one of `num_labels`; metric is the exact-match indicator.
    ClassificationBandit { num_labels: usize, targets: Vec<usize> },
    /// Pick (start cell, length) of a segment on a 1-D grid of `resolution`
    /// cells over [0, 1]; metric is temporal IoU against the target span.
    IntervalGrid { resolution: usize, max_len: usize, targets: Vec<GridSpan> },
    /// Pick (col, row) of a fixed-size box on a `resolution`^2 cell grid;
    /// metric is box IoU against the target box of the same size.
    BoxGrid { resolution: usize, box_size: usize, targets: Vec<GridPoint> },
    /// Pick (start, length) of a token span; metric is span F1 against the
    /// target span.
    SpanSelection { seq_len: usize, max_len: usize, targets: Vec<GridSpan> },
}

/// One task's environment: an action space plus hidden per-context targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEnv {
    pub name: String,
    pub kind: EnvKind,
}

impl TaskEnv {
    pub fn new(name: impl Into<String>, kind: EnvKind) -> Self {
        Self { name: name.into(), kind }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidEnv { env: self.name.clone(), reason: msg });
        match &self.kind {
            EnvKind::ClassificationBandit { num_labels, targets } => {
                if *num_labels < 2 {
                    return fail(format!("need at least 2 labels, got {num_labels}"));
                }
                if targets.is_empty() {
                    return fail("need at least one context target".into());
                }
                if let Some(t) = targets.iter().find(|t| **t >= *num_labels) {
                    return fail(format!("target label {t} out of range 0..{num_labels}"));
                }
            }
            EnvKind::IntervalGrid { resolution, max_len, targets } => {
                if *resolution < 2 || *max_len < 1 {
                    return fail("need resolution >= 2 and max_len >= 1".into());
                }
                if targets.is_empty() {
                    return fail("need at least one context target".into());
                }
                for t in targets {
                    if t.len < 1 || t.start + t.len > *resolution {
                        return fail(format!("target span {t:?} does not fit the grid"));
                    }
                }
            }
            EnvKind::BoxGrid { resolution, box_size, targets } => {
                if *resolution < 2 || *box_size < 1 {
                    return fail("need resolution >= 2 and box_size >= 1".into());
                }
                if targets.is_empty() {
                    return fail("need at least one context target".into());
                }
                for t in targets {
                    if t.col + box_size > *resolution || t.row + box_size > *resolution {
                        return fail(format!("target box at {t:?} does not fit the grid"));
                    }
                }
            }
            EnvKind::SpanSelection { seq_len, max_len, targets } => {
                if *seq_len < 2 || *max_len < 1 {
                    return fail("need seq_len >= 2 and max_len >= 1".into());
                }
                if targets.is_empty() {
                    return fail("need at least one context target".into());
                }
                for t in targets {
                    if t.len < 1 || t.start + t.len > *seq_len {
                        return fail(format!("target span {t:?} does not fit the sequence"));
                    }
                }
            }
        }
        if self.joint_outcomes() > MAX_JOINT_OUTCOMES {
            return Err(SimError::ActionSpaceTooLarge {
                outcomes: self.joint_outcomes(),
                limit: MAX_JOINT_OUTCOMES,
            });
        }
        Ok(())
    }

    pub fn contexts(&self) -> usize {
        match &self.kind {
            EnvKind::ClassificationBandit { targets, .. } => targets.len(),
            EnvKind::IntervalGrid { targets, .. } => targets.len(),
            EnvKind::BoxGrid { targets, .. } => targets.len(),
            EnvKind::SpanSelection { targets, .. } => targets.len(),
        }
    }

    /// Categorical sizes of the response token positions.
    pub fn position_sizes(&self) -> Vec<usize> {
        match &self.kind {
            EnvKind::ClassificationBandit { num_labels, .. } => vec![*num_labels],
            EnvKind::IntervalGrid { resolution, max_len, .. } => vec![*resolution, *max_len],
            EnvKind::BoxGrid { resolution, .. } => vec![*resolution, *resolution],
            EnvKind::SpanSelection { seq_len, max_len, .. } => vec![*seq_len, *max_len],
        }
    }

    pub fn joint_outcomes(&self) -> usize {
        self.position_sizes().iter().product()
    }

    pub fn metric_kind(&self) -> MetricKind {
        match &self.kind {
            EnvKind::ClassificationBandit { .. } => MetricKind::Accuracy,
            EnvKind::IntervalGrid { .. } => MetricKind::TIou,
            EnvKind::BoxGrid { .. } => MetricKind::Iou,
            EnvKind::SpanSelection { .. } => MetricKind::F1,
        }
    }

    pub fn task_kind(&self) -> TaskKind {
        match &self.kind {
            EnvKind::ClassificationBandit { .. } => TaskKind::Classification,
            EnvKind::IntervalGrid { .. } => TaskKind::VideoLocalization,
            EnvKind::BoxGrid { .. } => TaskKind::ImageLocalization,
            EnvKind::SpanSelection { .. } => TaskKind::TextLocalization,
        }
    }

    /// Scores one response (a tuple of position choices) for a context.
    pub fn metric(&self, ctx: usize, actions: &[usize]) -> MetricValue {
        match &self.kind {
            EnvKind::ClassificationBandit { targets, .. } => {
                accuracy_indicator(actions[0], targets[ctx])
            }
            EnvKind::IntervalGrid { resolution, targets, .. } => {
                let r = *resolution as f64;
                let t = targets[ctx];
                let pred = grid_interval(actions[0], actions[1] + 1, *resolution, r);
                let gt = grid_interval(t.start, t.len, *resolution, r);
                tiou_interval(&pred, &gt)
            }
            EnvKind::BoxGrid { resolution, box_size, targets } => {
                let t = targets[ctx];
                let pred = grid_box(actions[0], actions[1], *box_size, *resolution);
                let gt = grid_box(t.col, t.row, *box_size, *resolution);
                iou_box(&pred, &gt)
            }
            EnvKind::SpanSelection { seq_len, targets, .. } => {
                let t = targets[ctx];
                let end = (actions[0] + actions[1] + 1).min(*seq_len);
                let pred = TokenIndexSet::from_iter(actions[0]..end);
                let gt = TokenIndexSet::from_span(t.start, t.len);
                span_f1(&pred, &gt)
            }
        }
    }

    /// The continuous proxy for relaxed discrete metrics: the old policy's
    /// probability of the correct label. Only classification has one.
    pub fn proxy_target(&self, ctx: usize) -> Option<usize> {
        match &self.kind {
            EnvKind::ClassificationBandit { targets, .. } => Some(targets[ctx]),
            _ => None,
        }
    }
}

fn grid_interval(start: usize, len: usize, resolution: usize, r: f64) -> Interval {
    let end = (start + len).min(resolution);
    Interval::new(start as f64 / r, end as f64 / r).expect("grid intervals are ordered")
}

fn grid_box(col: usize, row: usize, size: usize, resolution: usize) -> Box2D {
    let x1 = (col + size).min(resolution) as f64;
    let y1 = (row + size).min(resolution) as f64;
    Box2D::new(col as f64, row as f64, x1, y1).expect("grid boxes are ordered")
}

/// Iterates all joint action tuples of the environment in lexicographic
/// order (mixed-radix counter over position sizes).
pub fn enumerate_actions(sizes: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = sizes.iter().product();
    (0..total).map(move |mut idx| {
        let mut actions = vec![0; sizes.len()];
        for (pos, &size) in sizes.iter().enumerate().rev() {
            actions[pos] = idx % size;
            idx /= size;
        }
        actions
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_metric() {
        let env = TaskEnv::new("cls", EnvKind::ClassificationBandit { num_labels: 4, targets: vec![2] });
        env.validate().unwrap();
        assert_eq!(env.metric(0, &[2]).value, 1.0);
        assert_eq!(env.metric(0, &[0]).value, 0.0);
        assert_eq!(env.position_sizes(), vec![4]);
    }

    #[test]
    fn interval_grid_metric() {
        // grid of 8 cells, target [2, 4): exact hit, half-shift, miss
        let env = TaskEnv::new(
            "loc",
            EnvKind::IntervalGrid {
                resolution: 8,
                max_len: 3,
                targets: vec![GridSpan { start: 2, len: 2 }],
            },
        );
        env.validate().unwrap();
        assert_eq!(env.metric(0, &[2, 1]).value, 1.0); // len index 1 => 2 cells
        assert!((env.metric(0, &[3, 1]).value - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(env.metric(0, &[6, 1]).value, 0.0);
    }

    #[test]
    fn box_grid_metric() {
        let env = TaskEnv::new(
            "img",
            EnvKind::BoxGrid { resolution: 6, box_size: 2, targets: vec![GridPoint { col: 1, row: 1 }] },
        );
        env.validate().unwrap();
        assert_eq!(env.metric(0, &[1, 1]).value, 1.0);
        // offset by one in each axis: overlap 1, union 7
        assert!((env.metric(0, &[2, 2]).value - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(env.metric(0, &[4, 4]).value, 0.0);
    }

    #[test]
    fn span_selection_metric() {
        let env = TaskEnv::new(
            "txt",
            EnvKind::SpanSelection { seq_len: 10, max_len: 4, targets: vec![GridSpan { start: 3, len: 3 }] },
        );
        env.validate().unwrap();
        assert_eq!(env.metric(0, &[3, 2]).value, 1.0);
        // pred {2,3,4} vs gt {3,4,5}: F1 = 2/3
        assert!((env.metric(0, &[2, 2]).value - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(env.metric(0, &[0, 1]).value, 0.0);
    }

    #[test]
    fn invalid_envs_rejected() {
        let bad = TaskEnv::new("b", EnvKind::ClassificationBandit { num_labels: 3, targets: vec![3] });
        assert!(bad.validate().is_err());
        let bad = TaskEnv::new(
            "b",
            EnvKind::IntervalGrid { resolution: 4, max_len: 2, targets: vec![GridSpan { start: 3, len: 2 }] },
        );
        assert!(bad.validate().is_err());
    }

    #[test]
    fn enumeration_covers_space() {
        let sizes = vec![3usize, 4];
        let all: Vec<_> = enumerate_actions(&sizes).collect();
        assert_eq!(all.len(), 12);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[11], vec![2, 3]);
        let unique: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), 12);
    }
}
