//! Loss terms against closed forms and hand-worked batches.

use fmuad::loss::{
    anomaly_score, compactness_loss, forecast_loss, record_batch_loss, training_loss,
    BatchForecast, EPSILON,
};
use fmuad::transforms::ForecastTarget;
use fmuad::{Tape, Tensor};
use rand::Rng;

use super::{random_tensor, rng, Check};

pub const TOLERANCE: f64 = 1e-12;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// `ℓ2` through the batch mean: `zᵢ = b/(b−1)·(Ŷᵢ − mean)`.
fn compactness_oracle(preds: &[Tensor]) -> f64 {
    let b = preds.len() as f64;
    let len = preds[0].len();
    let mean: Vec<f64> = (0..len)
        .map(|e| preds.iter().map(|p| p.data()[e]).sum::<f64>() / b)
        .collect();
    let spread: f64 = preds
        .iter()
        .flat_map(|p| p.data().iter().zip(&mean).map(|(v, m)| (v - m).powi(2)))
        .sum();
    (b / (b - 1.0)).powi(2) * spread / (preds[0].cols() as f64 * b)
}

fn random_batch(r: &mut impl Rng, b: usize, rows: usize, cols: usize) -> (Vec<Tensor>, Vec<Tensor>) {
    let y = (0..b).map(|_| random_tensor(r, &[rows, cols], 2.0)).collect();
    let p = (0..b).map(|_| random_tensor(r, &[rows, cols], 2.0)).collect();
    (y, p)
}

fn batch(y: &[Tensor], p: &[Tensor]) -> BatchForecast {
    BatchForecast::new(y.to_vec(), p.to_vec()).unwrap()
}

pub fn hand_examples() -> Result<f64, String> {
    let row = |v: &[f64]| Tensor::matrix(1, v.len(), v.to_vec()).unwrap();
    let b = batch(&[row(&[1.0, 1.0]), row(&[0.0, 4.0])], &[row(&[1.0, 2.0]), row(&[3.0, 4.0])]);
    let (l1, l2) = (forecast_loss(&b).unwrap(), compactness_loss(&b).unwrap());
    if l1 != 5.0 || l2 != 4.0 || rel(training_loss(l1, l2), 20.00005) > TOLERANCE {
        return Err(format!("two-row batch gave l1={l1} l2={l2}"));
    }
    // Identical predictions leave only the epsilon term.
    let same = batch(&[row(&[0.0]), row(&[2.0])], &[row(&[1.0]), row(&[1.0])]);
    let (l1, l2) = (forecast_loss(&same).unwrap(), compactness_loss(&same).unwrap());
    if l1 != 1.0 || l2 != 0.0 || training_loss(l1, l2) != EPSILON {
        return Err(format!("identical predictions gave l1={l1} l2={l2}"));
    }
    Ok(0.0)
}

pub fn closed_forms() -> Result<f64, String> {
    let mut r = rng(300);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let b = r.random_range(2..=8);
        let (rows, cols) = (r.random_range(1..=4), r.random_range(1..=7));
        let (y, p) = random_batch(&mut r, b, rows, cols);
        let fb = batch(&y, &p);
        let l1 = forecast_loss(&fb).unwrap();
        let l2 = compactness_loss(&fb).unwrap();
        let l1_ref = y
            .iter()
            .zip(&p)
            .map(|(a, c)| a.data().iter().zip(c.data()).map(|(u, v)| (u - v).powi(2)).sum::<f64>())
            .sum::<f64>()
            / b as f64;
        let l2_ref = compactness_oracle(&p);

        let mut tape = Tape::new();
        let yv: Vec<_> = y.iter().map(|t| tape.constant(t.clone())).collect();
        let pv: Vec<_> = p.iter().map(|t| tape.constant(t.clone())).collect();
        let terms = record_batch_loss(&mut tape, &yv, &pv).map_err(|e| e.to_string())?;
        let taped = [terms.l1, terms.l2, terms.total].map(|v| tape.value(v).data()[0]);

        let errs = [
            rel(l1, l1_ref),
            rel(l2, l2_ref),
            rel(taped[0], l1_ref),
            rel(taped[1], l2_ref),
            rel(taped[2], (EPSILON + l2_ref) * l1_ref),
        ];
        let err = errs.iter().copied().fold(0.0, f64::max);
        if err > TOLERANCE {
            return Err(format!("b={b} {rows}x{cols}: deviations {errs:?}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// `ℓ2(c·Ŷ) = c²·ℓ2(Ŷ)` and `ℓ2(Ŷ + C) = ℓ2(Ŷ)`.
pub fn compactness_symmetries() -> Result<f64, String> {
    let mut r = rng(301);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let b = r.random_range(2..=6);
        let (y, p) = random_batch(&mut r, b, 2, 5);
        let base = compactness_loss(&batch(&y, &p)).unwrap();
        let c = r.random_range(-5.0..5.0);
        let scaled: Vec<Tensor> = p.iter().map(|t| t.map(|v| c * v)).collect();
        let shift = random_tensor(&mut r, &[2, 5], 10.0);
        let shifted: Vec<Tensor> = p
            .iter()
            .map(|t| {
                let data = t.data().iter().zip(shift.data()).map(|(a, s)| a + s).collect();
                Tensor::new(vec![2, 5], data).unwrap()
            })
            .collect();
        let e1 = rel(compactness_loss(&batch(&y, &scaled)).unwrap(), c * c * base);
        let e2 = rel(compactness_loss(&batch(&y, &shifted)).unwrap(), base);
        let err = e1.max(e2);
        if err > TOLERANCE {
            return Err(format!("symmetry violated by {err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn score_matches_forecast_loss() -> Result<f64, String> {
    let mut r = rng(302);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (m, k) = (r.random_range(1..=4), 2 * r.random_range(1..=5));
        let n = m + k / 2 + k;
        let y = random_tensor(&mut r, &[m, n], 1.0);
        let p = random_tensor(&mut r, &[m, n], 1.0);
        let score = anomaly_score(&ForecastTarget::from_matrix(y.clone(), k).unwrap(), &p).unwrap();
        let single = forecast_loss(&BatchForecast::new(vec![y], vec![p]).unwrap()).unwrap();
        if score != single {
            return Err(format!("score {score} vs singleton loss {single}"));
        }
        worst = worst.max((score - single).abs());
    }
    Ok(worst)
}

pub const CHECKS: [(&str, Check); 4] = [
    ("hand_examples", hand_examples),
    ("closed_forms", closed_forms),
    ("compactness_symmetries", compactness_symmetries),
    ("score_matches_forecast_loss", score_matches_forecast_loss),
];
