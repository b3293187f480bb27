//! Point-adjusted precision/recall/F1 and best-F1 threshold selection.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// One anomaly score per evaluated window, keyed by the window's final
/// time step.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    timestamps: Vec<usize>,
    scores: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(timestamps: Vec<usize>, scores: Vec<f64>) -> Result<Self> {
        ensure!(
            timestamps.len() == scores.len(),
            "{} timestamps for {} scores",
            timestamps.len(),
            scores.len()
        );
        ensure!(
            timestamps.windows(2).all(|w| w[0] < w[1]),
            "timestamps must be strictly increasing"
        );
        ensure!(
            scores.iter().all(|s| s.is_finite() && *s >= 0.0),
            "scores must be finite and nonnegative"
        );
        Ok(ScoreSeries { timestamps, scores })
    }

    pub fn timestamps(&self) -> &[usize] {
        &self.timestamps
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Picks the labels of the scored time steps out of a full-length label
    /// sequence. The scores must cover a contiguous suffix of the labels.
    pub fn aligned_labels(&self, labels: &[bool]) -> Result<Vec<bool>> {
        ensure!(!self.is_empty(), "score series is empty");
        let first = self.timestamps[0];
        let last = *self.timestamps.last().expect("nonempty");
        ensure!(
            last + 1 == labels.len(),
            "scores end at t={last} but {} labels were given",
            labels.len()
        );
        ensure!(
            last - first + 1 == self.len(),
            "score timestamps {first}..={last} have gaps ({} scores)",
            self.len()
        );
        Ok(labels[first..].to_vec())
    }
}

/// Precision, recall and F1 of one set of binary predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics from raw counts; every zero denominator yields 0.
pub fn metrics_from_counts(tp: usize, fp: usize, fn_: usize) -> Metrics {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics {
        precision,
        recall,
        f1,
    }
}

fn counts(pred: &[bool], labels: &[bool]) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for (&p, &l) in pred.iter().zip(labels) {
        match (p, l) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => {}
        }
    }
    c
}

pub fn prf1(pred: &[bool], labels: &[bool]) -> Result<Metrics> {
    ensure!(
        pred.len() == labels.len(),
        "{} predictions for {} labels",
        pred.len(),
        labels.len()
    );
    let (tp, fp, fn_) = counts(pred, labels);
    Ok(metrics_from_counts(tp, fp, fn_))
}

/// Maximal runs of `true` labels.
pub fn label_segments(labels: &[bool]) -> Vec<Range<usize>> {
    let mut segments = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                segments.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segments.push(s..labels.len());
    }
    segments
}

/// Marks a whole labeled segment as detected when any point in it is.
pub fn point_adjust(pred: &[bool], labels: &[bool]) -> Result<Vec<bool>> {
    ensure!(
        pred.len() == labels.len(),
        "{} predictions for {} labels",
        pred.len(),
        labels.len()
    );
    let mut out = pred.to_vec();
    for seg in label_segments(labels) {
        if pred[seg.clone()].iter().any(|&p| p) {
            out[seg].fill(true);
        }
    }
    Ok(out)
}

/// Result of evaluating scores at one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Points with `score > threshold` are flagged. `None` (JSON `null`)
    /// means an infinite threshold: nothing is flagged.
    pub threshold: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_adjusted: f64,
    pub recall_adjusted: f64,
    pub f1_adjusted: f64,
    /// Point-adjusted counts.
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl EvalReport {
    pub fn threshold_value(&self) -> f64 {
        self.threshold.unwrap_or(f64::INFINITY)
    }

    /// `key=value` lines, one per field.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let threshold = match self.threshold {
            Some(t) => format!("{t}"),
            None => "inf".to_string(),
        };
        let _ = writeln!(s, "threshold={threshold}");
        let _ = writeln!(s, "precision={}", self.precision);
        let _ = writeln!(s, "recall={}", self.recall);
        let _ = writeln!(s, "f1={}", self.f1);
        let _ = writeln!(s, "precision_adjusted={}", self.precision_adjusted);
        let _ = writeln!(s, "recall_adjusted={}", self.recall_adjusted);
        let _ = writeln!(s, "f1_adjusted={}", self.f1_adjusted);
        let _ = writeln!(s, "tp={}", self.tp);
        let _ = writeln!(s, "fp={}", self.fp);
        let _ = writeln!(s, "fn={}", self.fn_);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

fn report_at(
    threshold: f64,
    raw: (usize, usize, usize),
    adjusted: (usize, usize, usize),
) -> EvalReport {
    let r = metrics_from_counts(raw.0, raw.1, raw.2);
    let a = metrics_from_counts(adjusted.0, adjusted.1, adjusted.2);
    EvalReport {
        threshold: threshold.is_finite().then_some(threshold),
        precision: r.precision,
        recall: r.recall,
        f1: r.f1,
        precision_adjusted: a.precision,
        recall_adjusted: a.recall,
        f1_adjusted: a.f1,
        tp: adjusted.0,
        fp: adjusted.1,
        fn_: adjusted.2,
    }
}

/// Evaluates scores at a fixed threshold, raw and point-adjusted.
pub fn evaluate_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<EvalReport> {
    evaluate_pooled_at(&[(scores, labels)], threshold)
}

/// Like [`evaluate_at`], summing counts over entities; segments never
/// span two entities.
pub fn evaluate_pooled_at(entities: &[(&[f64], &[bool])], threshold: f64) -> Result<EvalReport> {
    ensure!(!entities.is_empty(), "no entities to evaluate");
    let add = |a: (usize, usize, usize), b: (usize, usize, usize)| (a.0 + b.0, a.1 + b.1, a.2 + b.2);
    let (mut raw, mut adjusted) = ((0, 0, 0), (0, 0, 0));
    for (scores, labels) in entities {
        ensure!(
            scores.len() == labels.len(),
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        );
        let pred: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
        raw = add(raw, counts(&pred, labels));
        adjusted = add(adjusted, counts(&point_adjust(&pred, labels)?, labels));
    }
    Ok(report_at(threshold, raw, adjusted))
}

/// Sweeps every distinct score (plus +∞) as threshold and returns the one
/// maximising point-adjusted F1; ties go to the larger threshold.
pub fn select_threshold(scores: &[f64], labels: &[bool]) -> Result<EvalReport> {
    select_threshold_pooled(&[(scores, labels)])
}

/// Like [`select_threshold`], pooling counts over several entities while
/// keeping point-adjust segments within each entity.
pub fn select_threshold_pooled(entities: &[(&[f64], &[bool])]) -> Result<EvalReport> {
    ensure!(!entities.is_empty(), "no entities to evaluate");
    let mut negatives = Vec::new();
    let mut positives = Vec::new();
    // (max score inside the segment, segment length)
    let mut segments: Vec<(f64, usize)> = Vec::new();
    for (scores, labels) in entities {
        ensure!(
            scores.len() == labels.len(),
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        );
        ensure!(!scores.is_empty(), "cannot select a threshold on empty scores");
        ensure!(
            scores.iter().all(|s| !s.is_nan()),
            "scores must not contain NaN"
        );
        for (&s, &l) in scores.iter().zip(labels.iter()) {
            if l {
                positives.push(s);
            } else {
                negatives.push(s);
            }
        }
        for seg in label_segments(labels) {
            let max = scores[seg.clone()]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            segments.push((max, seg.len()));
        }
    }
    let by_value = |a: &f64, b: &f64| a.total_cmp(b);
    negatives.sort_by(by_value);
    positives.sort_by(by_value);
    segments.sort_by(|a, b| a.0.total_cmp(&b.0));
    // detected_len[i] = total length of segments[i..]
    let mut detected_len = vec![0usize; segments.len() + 1];
    for i in (0..segments.len()).rev() {
        detected_len[i] = detected_len[i + 1] + segments[i].1;
    }
    let above = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&v| v <= t);

    let mut candidates: Vec<f64> = negatives.iter().chain(&positives).cloned().collect();
    candidates.sort_by(by_value);
    candidates.dedup();
    candidates.push(f64::INFINITY);

    let total_pos = positives.len();
    // F1 = 2tp / (2tp + fp + fn), compared as exact fractions so that equal
    // scores tie even when their float values would round differently.
    let mut best: Option<(f64, (u128, u128))> = None;
    for &t in candidates.iter().rev() {
        let fp = above(&negatives, t);
        let tp = detected_len[segments.partition_point(|s| s.0 <= t)];
        let f1 = if tp == 0 {
            (0, 1)
        } else {
            (2 * tp as u128, (tp + fp + total_pos) as u128)
        };
        if best.is_none_or(|(_, b)| f1.0 * b.1 > b.0 * f1.1) {
            best = Some((t, f1));
        }
    }
    let (t, _) = best.expect("at least the infinite candidate");
    let raw_tp = above(&positives, t);
    let fp = above(&negatives, t);
    let tp = detected_len[segments.partition_point(|s| s.0 <= t)];
    Ok(report_at(
        t,
        (raw_tp, fp, total_pos - raw_tp),
        (tp, fp, total_pos - tp),
    ))
}
