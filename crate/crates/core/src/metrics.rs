//! Task-performance metrics feeding the reward mappings: exact-match
//! accuracy, box IoU, temporal IoU, and token-span F1, plus the per-task
//! data-filter gates.
//!
//! All metrics are pure functions returning values in `[0, 1]`. Degenerate
//! geometry (zero-area boxes, zero-length intervals, empty index sets)
//! scores 0 rather than erroring, which keeps the reward pipeline total.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid box: require x_min <= x_max and y_min <= y_max, got ({0}, {1}, {2}, {3})")]
    InvalidBox(f64, f64, f64, f64),
    #[error("invalid interval: require start <= end, got [{0}, {1}]")]
    InvalidInterval(f64, f64),
    #[error("metric value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("metric kind {metric:?} does not match task kind {task:?}")]
    KindMismatch { metric: MetricKind, task: TaskKind },
}

/// Axis-aligned bounding box. `x_min <= x_max`, `y_min <= y_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, MetricsError> {
        if !(x_min <= x_max && y_min <= y_max) {
            return Err(MetricsError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Closed time interval in seconds (or any consistent unit). `start <= end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self, MetricsError> {
        if !(start <= end) {
            return Err(MetricsError::InvalidInterval(start, end));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Set of token indices (set semantics: no duplicates).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenIndexSet {
    indices: BTreeSet<usize>,
}

impl FromIterator<usize> for TokenIndexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self { indices: iter.into_iter().collect() }
    }
}

impl TokenIndexSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Contiguous run `[start, start + len)`.
    pub fn from_span(start: usize, len: usize) -> Self {
        (start..start + len).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn intersection_size(&self, other: &Self) -> usize {
        self.indices.intersection(&other.indices).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Iou,
    F1,
    TIou,
}

/// Which forensic task a metric (or filter threshold) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    ImageLocalization,
    TextLocalization,
    VideoLocalization,
}

impl TaskKind {
    /// The metric kind this task is scored with.
    pub fn metric_kind(self) -> MetricKind {
        match self {
            TaskKind::Classification => MetricKind::Accuracy,
            TaskKind::ImageLocalization => MetricKind::Iou,
            TaskKind::TextLocalization => MetricKind::F1,
            TaskKind::VideoLocalization => MetricKind::TIou,
        }
    }
}

/// A task metric value in `[0, 1]` tagged with its kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub kind: MetricKind,
}

impl MetricValue {
    pub fn new(value: f64, kind: MetricKind) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(MetricsError::ValueOutOfRange(value));
        }
        Ok(Self { value, kind })
    }

    // Clamps tiny floating excursions from the ratio arithmetic.
    fn ratio(value: f64, kind: MetricKind) -> Self {
        Self { value: value.clamp(0.0, 1.0), kind }
    }
}

/// Intersection-over-union of two boxes. Returns 0 when the union has zero
/// area (both boxes degenerate).
pub fn iou_box(a: &Box2D, b: &Box2D) -> MetricValue {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    let value = if union > 0.0 { inter / union } else { 0.0 };
    MetricValue::ratio(value, MetricKind::Iou)
}

/// Temporal IoU of two intervals. Returns 0 when the union has zero length.
pub fn tiou_interval(a: &Interval, b: &Interval) -> MetricValue {
    let overlap = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - overlap;
    let value = if union > 0.0 { overlap / union } else { 0.0 };
    MetricValue::ratio(value, MetricKind::TIou)
}

/// F1 between predicted and ground-truth index sets: harmonic mean of
/// precision and recall. 0 if either set or the intersection is empty.
pub fn span_f1(pred: &TokenIndexSet, gt: &TokenIndexSet) -> MetricValue {
    if pred.is_empty() || gt.is_empty() {
        return MetricValue::ratio(0.0, MetricKind::F1);
    }
    let inter = pred.intersection_size(gt) as f64;
    if inter == 0.0 {
        return MetricValue::ratio(0.0, MetricKind::F1);
    }
    let precision = inter / pred.len() as f64;
    let recall = inter / gt.len() as f64;
    MetricValue::ratio(2.0 * precision * recall / (precision + recall), MetricKind::F1)
}

/// Exact-match indicator: 1 if the predicted label equals the ground truth.
pub fn accuracy_indicator(pred: usize, gt: usize) -> MetricValue {
    MetricValue { value: if pred == gt { 1.0 } else { 0.0 }, kind: MetricKind::Accuracy }
}

/// Retention thresholds for the data-filter gates, one per task family.
/// Classification requires exact correctness; the localization tasks use a
/// minimum overlap score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub image_iou: f64,
    pub text_f1: f64,
    pub video_tiou: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self { image_iou: 0.75, text_f1: 0.75, video_tiou: 0.75 }
    }
}

/// Retain/reject gate for one sample under the default thresholds.
pub fn filter_gate(metric: &MetricValue, task: TaskKind) -> Result<bool, MetricsError> {
    filter_gate_with(metric, task, &FilterThresholds::default())
}

/// Retain/reject gate with explicit thresholds. Comparison is `>=` at the
/// configured constants; classification retains only exact correctness.
pub fn filter_gate_with(
    metric: &MetricValue,
    task: TaskKind,
    thresholds: &FilterThresholds,
) -> Result<bool, MetricsError> {
    if metric.kind != task.metric_kind() {
        return Err(MetricsError::KindMismatch { metric: metric.kind, task });
    }
    Ok(match task {
        TaskKind::Classification => metric.value == 1.0,
        TaskKind::ImageLocalization => metric.value >= thresholds.image_iou,
        TaskKind::TextLocalization => metric.value >= thresholds.text_f1,
        TaskKind::VideoLocalization => metric.value >= thresholds.video_tiou,
    })
}
