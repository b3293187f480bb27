//! Point-adjust and threshold selection against brute force.

use fmuad::eval::{evaluate_at, point_adjust, prf1, select_threshold};
use rand::Rng;

use super::{rng, Check};

/// Expands every detected labelled point to its whole run by scanning.
fn adjust_oracle(pred: &[bool], labels: &[bool]) -> Vec<bool> {
    let n = labels.len();
    (0..n)
        .map(|i| {
            if pred[i] {
                return true;
            }
            if !labels[i] {
                return false;
            }
            let mut lo = i;
            while lo > 0 && labels[lo - 1] {
                lo -= 1;
            }
            let mut hi = i;
            while hi + 1 < n && labels[hi + 1] {
                hi += 1;
            }
            pred[lo..=hi].iter().any(|&p| p)
        })
        .collect()
}

fn counts(pred: &[bool], labels: &[bool]) -> (u64, u64, u64) {
    let tp = pred.iter().zip(labels).filter(|(&p, &l)| p && l).count() as u64;
    let fp = pred.iter().zip(labels).filter(|(&p, &l)| p && !l).count() as u64;
    let fn_ = pred.iter().zip(labels).filter(|(&p, &l)| !p && l).count() as u64;
    (tp, fp, fn_)
}

/// F1 as the exact fraction `2tp / (2tp + fp + fn)`.
fn f1_fraction((tp, fp, fn_): (u64, u64, u64)) -> (u64, u64) {
    if tp == 0 {
        (0, 1)
    } else {
        (2 * tp, 2 * tp + fp + fn_)
    }
}

fn random_instance(r: &mut impl Rng) -> (Vec<f64>, Vec<bool>) {
    let n = r.random_range(1..=200);
    let levels = r.random_range(2..=30);
    let rate = r.random_range(0.0..0.3);
    let mut labels = Vec::with_capacity(n);
    let mut on = false;
    for _ in 0..n {
        if r.random_bool(if on { 0.2 } else { rate / 5.0 }) {
            on = !on;
        }
        labels.push(on);
    }
    // Quantised scores so that ties are common.
    let scores = labels
        .iter()
        .map(|&l| {
            let base = r.random_range(0..levels) as f64 / levels as f64;
            if l { base + r.random_range(0.0..0.5) } else { base }
        })
        .map(|v: f64| (v * 8.0).round() / 8.0)
        .collect();
    (scores, labels)
}

pub fn point_adjust_oracle() -> Result<f64, String> {
    let mut r = rng(400);
    for case in 0..500 {
        let (_, labels) = random_instance(&mut r);
        let pred: Vec<bool> = labels.iter().map(|_| r.random_bool(0.2)).collect();
        let got = point_adjust(&pred, &labels).map_err(|e| e.to_string())?;
        if got != adjust_oracle(&pred, &labels) {
            return Err(format!("case {case}: point-adjust differs"));
        }
        for (i, (&g, &p)) in got.iter().zip(&pred).enumerate() {
            if (p && !g) || (g && !p && !labels[i]) {
                return Err(format!("case {case}: point {i} changed illegally"));
            }
        }
        let raw = prf1(&pred, &labels).unwrap();
        let adj = prf1(&got, &labels).unwrap();
        if adj.precision < raw.precision || adj.recall < raw.recall || adj.f1 < raw.f1 {
            return Err(format!("case {case}: adjusted metrics fell below raw"));
        }
    }
    Ok(0.0)
}

pub fn threshold_oracle() -> Result<f64, String> {
    let mut r = rng(401);
    for case in 0..500 {
        let (scores, labels) = random_instance(&mut r);
        let mut candidates = scores.clone();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        candidates.push(f64::INFINITY);
        // Best exact F1, ties resolved towards the larger threshold.
        let mut best: Option<(f64, (u64, u64))> = None;
        for &t in &candidates {
            let pred: Vec<bool> = scores.iter().map(|&s| s > t).collect();
            let f = f1_fraction(counts(&adjust_oracle(&pred, &labels), &labels));
            let better = match best {
                None => true,
                Some((_, b)) => f.0 * b.1 >= b.0 * f.1,
            };
            if better {
                best = Some((t, f));
            }
        }
        let (t, f) = best.unwrap();
        let report = select_threshold(&scores, &labels).map_err(|e| e.to_string())?;
        if report.threshold_value() != t {
            return Err(format!(
                "case {case}: threshold {} vs brute force {t} (F1 {}/{})",
                report.threshold_value(),
                f.0,
                f.1
            ));
        }
        let fixed = evaluate_at(&scores, &labels, t).unwrap();
        if fixed != report {
            return Err(format!("case {case}: report differs from evaluation at {t}"));
        }
        let pred: Vec<bool> = scores.iter().map(|&s| s > t).collect();
        let (tp, fp, fn_) = counts(&adjust_oracle(&pred, &labels), &labels);
        if (report.tp, report.fp, report.fn_) != (tp as usize, fp as usize, fn_ as usize) {
            return Err(format!("case {case}: counts differ"));
        }
        if (report.f1_adjusted - f.0 as f64 / f.1 as f64).abs() > 1e-12 {
            return Err(format!("case {case}: F1 {} vs {}/{}", report.f1_adjusted, f.0, f.1));
        }
    }
    Ok(0.0)
}

pub const CHECKS: [(&str, Check); 2] = [
    ("point_adjust_oracle", point_adjust_oracle),
    ("threshold_oracle", threshold_oracle),
];
