//! Mini-batch training and sliding-window scoring.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::eval::ScoreSeries;
use crate::loss::record_batch_loss;
use crate::model::Fmuad;
use crate::optim::{Adam, AdamConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::transforms::SeriesMatrix;

/// Which objective the optimiser follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// `(ε + ℓ2)·ℓ1`.
    Full,
    /// Forecast error `ℓ1` alone.
    L1,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(LossVariant::Full),
            "l1" => Ok(LossVariant::L1),
            other => Err(Error::config("loss", format!("expected `full` or `l1`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossVariant::Full => "full",
            LossVariant::L1 => "l1",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossVariant,
    pub seed: u64,
    /// Step between training instances; `None` uses the window length `k`.
    pub stride: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            loss: LossVariant::Full,
            seed: 0,
            stride: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch", "batch size must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("lr", format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.stride == Some(0) {
            return Err(Error::config("train_stride", "must be at least 1"));
        }
        Ok(())
    }
}

/// Batch-averaged loss terms of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub loss: f64,
}

/// End times `t` of the training instances.
pub fn training_instances(len: usize, tau: usize, stride: usize) -> Vec<usize> {
    if len < tau {
        return Vec::new();
    }
    (tau - 1..len).step_by(stride).collect()
}

struct WindowPass {
    tape: Tape,
    vars: Vec<crate::tape::Var>,
    prediction: crate::tape::Var,
    truth: Tensor,
}

fn forward_window(model: &Fmuad, series: &SeriesMatrix, t: usize) -> Result<WindowPass> {
    let instance = series.instance(t, model.config().tau)?;
    let truth = model.target(&instance)?.into_matrix();
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let prediction = model.forward(&mut tape, &bound, &instance)?;
    Ok(WindowPass {
        tape,
        vars: bound.vars().to_vec(),
        prediction,
        truth,
    })
}

/// Runs one optimisation step on the instances ending at `ends` and returns
/// `(ℓ1, ℓ2, ℓ)` before the update.
pub fn train_step(model: &mut Fmuad, adam: &mut Adam, series: &SeriesMatrix, ends: &[usize], loss: LossVariant) -> Result<(f64, f64, f64)> {
    ensure!(ends.len() >= 2, "a training batch needs at least 2 instances, got {}", ends.len());
    let passes: Vec<WindowPass> = ends
        .par_iter()
        .map(|&t| forward_window(model, series, t))
        .collect::<Result<_>>()?;

    let mut loss_tape = Tape::new();
    let truths: Vec<_> = passes.iter().map(|p| loss_tape.constant(p.truth.clone())).collect();
    let preds: Vec<_> = passes
        .iter()
        .map(|p| loss_tape.param(p.tape.value(p.prediction).clone()))
        .collect();
    let terms = record_batch_loss(&mut loss_tape, &truths, &preds)?;
    let value = |v| loss_tape.value(v).item();
    let (l1, l2, total) = (value(terms.l1)?, value(terms.l2)?, value(terms.total)?);
    if !(l1.is_finite() && l2.is_finite() && total.is_finite()) {
        return Err(Error::contract(format!("training diverged: l1={l1}, l2={l2}")));
    }
    let objective = match loss {
        LossVariant::Full => terms.total,
        LossVariant::L1 => terms.l1,
    };
    let upstream = loss_tape.backward(objective)?;
    let seeds: Vec<Tensor> = preds
        .iter()
        .map(|&v| upstream.get(v).expect("prediction leaves are trainable"))
        .collect();

    let per_window: Vec<Vec<Tensor>> = passes
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(pass, seed)| {
            let grads = pass.tape.backward_with_seed(pass.prediction, seed)?;
            Ok(pass
                .vars
                .iter()
                .map(|&v| grads.get(v).expect("parameters are trainable leaves"))
                .collect())
        })
        .collect::<Result<_>>()?;
    drop(passes);

    let mut summed: Vec<Vec<f64>> = per_window[0].iter().map(|t| t.data().to_vec()).collect();
    for window in &per_window[1..] {
        for (acc, g) in summed.iter_mut().zip(window) {
            for (a, b) in acc.iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    let grads = summed
        .into_iter()
        .zip(model.params().tensors())
        .map(|(g, p)| Tensor::new(p.shape().to_vec(), g))
        .collect::<Result<Vec<_>>>()?;
    adam.step(model.params_mut(), &grads)?;
    Ok((l1, l2, total))
}

/// Trains `model` on a normalised series. `on_epoch` sees each epoch's
/// statistics as soon as it finishes.
pub fn train(
    model: &mut Fmuad,
    series: &SeriesMatrix,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    ensure!(
        series.features() == model.config().features,
        "series has {} features, model expects {}",
        series.features(),
        model.config().features
    );
    let stride = config.stride.unwrap_or(model.config().window);
    let mut ends = training_instances(series.len(), model.config().tau, stride);
    ensure!(
        ends.len() >= 2,
        "training series of length {} yields {} instances for tau={}; need at least 2",
        series.len(),
        ends.len(),
        model.config().tau
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        ends.shuffle(&mut rng);
        let (mut l1, mut l2, mut total, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for batch in ends.chunks(config.batch_size).filter(|b| b.len() >= 2) {
            let (a, b, c) = train_step(model, &mut adam, series, batch, config.loss)?;
            l1 += a;
            l2 += b;
            total += c;
            batches += 1;
        }
        let n = batches as f64;
        let stats = EpochStats {
            epoch,
            l1: l1 / n,
            l2: l2 / n,
            loss: total / n,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Scores every instance of `series` at stride 1. Timestamps are the
/// 0-based end times `tau-1 ..= T-1`.
pub fn score_series(model: &Fmuad, series: &SeriesMatrix) -> Result<ScoreSeries> {
    let tau = model.config().tau;
    ensure!(
        series.features() == model.config().features,
        "series has {} features, model expects {}",
        series.features(),
        model.config().features
    );
    ensure!(
        series.len() >= tau,
        "series of length {} is shorter than tau={tau}",
        series.len()
    );
    let ends: Vec<usize> = (tau - 1..series.len()).collect();
    let scores = ends
        .par_iter()
        .map(|&t| model.score_instance(&series.instance(t, tau)?))
        .collect::<Result<Vec<_>>>()?;
    ScoreSeries::new(ends, scores)
}
