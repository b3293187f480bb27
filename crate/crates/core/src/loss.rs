//! Training objective and test-time anomaly score.
//!
//! The forecast term `ℓ1` is the batch-mean squared Frobenius error. The
//! compactness term `ℓ2` is the leave-one-out variance of the predictions,
//! normalised by the column count `n` and the batch size. Training
//! minimises `(ε + ℓ2)·ℓ1`.

use crate::error::{ensure, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::transforms::ForecastTarget;

/// Keeps the all-zero network from reaching zero loss.
pub const EPSILON: f64 = 1e-5;

/// Ground truths and predictions of one batch.
#[derive(Clone, Debug)]
pub struct BatchForecast {
    truths: Vec<Tensor>,
    predictions: Vec<Tensor>,
}

impl BatchForecast {
    pub fn new(truths: Vec<Tensor>, predictions: Vec<Tensor>) -> Result<Self> {
        ensure!(
            truths.len() == predictions.len(),
            "{} truths for {} predictions",
            truths.len(),
            predictions.len()
        );
        ensure!(!truths.is_empty(), "batch must not be empty");
        let shape = truths[0].shape();
        ensure!(shape.len() == 2, "forecasts must be matrices, got {shape:?}");
        for t in truths.iter().chain(&predictions) {
            ensure!(
                t.shape() == shape,
                "batch mixes shapes {shape:?} and {:?}",
                t.shape()
            );
        }
        Ok(BatchForecast {
            truths,
            predictions,
        })
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }

    pub fn truths(&self) -> &[Tensor] {
        &self.truths
    }

    pub fn predictions(&self) -> &[Tensor] {
        &self.predictions
    }
}

/// `ℓ1 = (1/b) Σᵢ ‖Yᵢ − Ŷᵢ‖²`.
pub fn forecast_loss(batch: &BatchForecast) -> Result<f64> {
    let mut total = 0.0;
    for (y, y_hat) in batch.truths.iter().zip(&batch.predictions) {
        total += y.squared_distance(y_hat)?;
    }
    Ok(total / batch.len() as f64)
}

/// `ℓ2 = (1/(n·b)) Σᵢ ‖zᵢ‖²` with `zᵢ = Ŷᵢ − mean_{j≠i} Ŷⱼ`.
pub fn compactness_loss(batch: &BatchForecast) -> Result<f64> {
    let b = batch.len();
    ensure!(b >= 2, "compactness loss needs a batch of at least 2, got {b}");
    let preds = &batch.predictions;
    let n = preds[0].cols();
    let len = preds[0].len();
    let mut sum = vec![0.0; len];
    for p in preds {
        for (s, v) in sum.iter_mut().zip(p.data()) {
            *s += v;
        }
    }
    let mut total = 0.0;
    for p in preds {
        for (v, s) in p.data().iter().zip(&sum) {
            let others = (s - v) / (b - 1) as f64;
            let z = v - others;
            total += z * z;
        }
    }
    Ok(total / (n * b) as f64)
}

/// `ℓ = (ε + ℓ2)·ℓ1`.
pub fn training_loss(l1: f64, l2: f64) -> f64 {
    (EPSILON + l2) * l1
}

/// Test-time score of one window: `‖Y_t − Ŷ_t‖²`.
pub fn anomaly_score(truth: &ForecastTarget, prediction: &Tensor) -> Result<f64> {
    truth.matrix().squared_distance(prediction)
}

/// Tape handles of the three loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub l1: Var,
    pub l2: Var,
    pub total: Var,
}

/// Records `ℓ1`, `ℓ2` and `(ε + ℓ2)·ℓ1` on `tape` for a batch of
/// `truths`/`predictions` already recorded there.
pub fn record_batch_loss(tape: &mut Tape, truths: &[Var], predictions: &[Var]) -> Result<LossTerms> {
    let b = predictions.len();
    ensure!(
        truths.len() == b,
        "{} truths for {b} predictions",
        truths.len()
    );
    ensure!(b >= 2, "training batches need at least 2 windows, got {b}");
    let n = tape.value(predictions[0]).cols();

    let mut errors = Vec::with_capacity(b);
    for (&y, &y_hat) in truths.iter().zip(predictions) {
        let diff = tape.sub(y, y_hat)?;
        errors.push(tape.sum_squares(diff));
    }
    let l1 = sum_all(tape, &errors)?;
    let l1 = tape.scale(l1, 1.0 / b as f64);

    let total_pred = sum_all(tape, predictions)?;
    let mut spreads = Vec::with_capacity(b);
    for &y_hat in predictions {
        // zᵢ = Ŷᵢ − (S − Ŷᵢ)/(b − 1) = (b/(b−1))·Ŷᵢ − S/(b−1)
        let own = tape.scale(y_hat, b as f64 / (b - 1) as f64);
        let rest = tape.scale(total_pred, 1.0 / (b - 1) as f64);
        let z = tape.sub(own, rest)?;
        spreads.push(tape.sum_squares(z));
    }
    let l2 = sum_all(tape, &spreads)?;
    let l2 = tape.scale(l2, 1.0 / (n * b) as f64);

    let factor = tape.add_scalar(l2, EPSILON);
    let total = tape.mul(factor, l1)?;
    Ok(LossTerms { l1, l2, total })
}

fn sum_all(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}
