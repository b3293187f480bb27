//! Reverse-mode gradients against central finite differences.

use fmuad::detector::{
    temporal_attention, ConvLstmCell, CorrelationDetector, SpatialDetector, TemporalDetector,
};
use fmuad::loss::record_batch_loss;
use fmuad::params::{Bound, ParamSet};
use fmuad::{DetectorSet, Fmuad, ModelConfig, Tape, Tensor, Var};

use super::{random_tensor, rng, Check};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared in absolute terms.
const FLOOR: f64 = 1e-6;

type Graph<'a> = dyn Fn(&mut Tape, &[Var]) -> fmuad::Result<Var> + 'a;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Reduces a non-scalar output to `Σ out ⊙ r` with fixed random `r`.
fn reduce(tape: &mut Tape, out: Var, weights: &Option<Tensor>) -> fmuad::Result<Var> {
    match weights {
        None => Ok(out),
        Some(w) => {
            let w = tape.constant(w.clone());
            tape.dot(out, w)
        }
    }
}

fn output_weights(shape: &[usize], seed: u64) -> Option<Tensor> {
    if shape.is_empty() {
        None
    } else {
        Some(random_tensor(&mut rng(seed ^ 0xA5A5), shape, 1.0))
    }
}

fn compare(label: &str, analytic: &[f64], numeric: &[f64]) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a, n);
        if !(e <= TOLERANCE) {
            return Err(format!("{label}[{i}]: analytic {a:e} vs numeric {n:e} (rel {e:e})"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Checks the gradient of `graph` with respect to every entry of `inputs`.
pub fn check_inputs(inputs: &[Tensor], graph: &Graph, seed: u64) -> Result<f64, String> {
    let fail = |e: fmuad::Error| e.to_string();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = graph(&mut tape, &vars).map_err(fail)?;
    let weights = output_weights(tape.value(out).shape(), seed);
    let loss = reduce(&mut tape, out, &weights).map_err(fail)?;
    let grads = tape.backward(loss).map_err(fail)?;

    let value_at = |inputs: &[Tensor]| -> Result<f64, String> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = graph(&mut tape, &vars).map_err(fail)?;
        let loss = reduce(&mut tape, out, &weights).map_err(fail)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut worst: f64 = 0.0;
    for (idx, var) in vars.iter().enumerate() {
        let analytic = grads.slice(*var).ok_or("missing gradient")?.to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..inputs[idx].len() {
            let mut probe = inputs.to_vec();
            let mut data = probe[idx].data().to_vec();
            let x = data[j];
            data[j] = x + STEP;
            probe[idx] = Tensor::new(inputs[idx].shape().to_vec(), data.clone()).unwrap();
            let up = value_at(&probe)?;
            data[j] = x - STEP;
            probe[idx] = Tensor::new(inputs[idx].shape().to_vec(), data).unwrap();
            let down = value_at(&probe)?;
            numeric.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(compare(&format!("input {idx}"), &analytic, &numeric)?);
    }
    Ok(worst)
}

type ParamGraph<'a> = dyn Fn(&mut Tape, &Bound) -> fmuad::Result<Var> + 'a;

/// Checks the gradient of a scalar `graph` with respect to every parameter.
pub fn check_params(params: &ParamSet, graph: &ParamGraph) -> Result<f64, String> {
    let fail = |e: fmuad::Error| e.to_string();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = graph(&mut tape, &bound).map_err(fail)?;
    let grads = tape.backward(loss).map_err(fail)?;

    let mut probe = params.clone();
    let value_at = |probe: &ParamSet| -> Result<f64, String> {
        let mut tape = Tape::new();
        let bound = probe.bind_frozen(&mut tape);
        let loss = graph(&mut tape, &bound).map_err(fail)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut worst: f64 = 0.0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let analytic = grads.slice(bound.var(id)).ok_or("missing gradient")?.to_vec();
        let original = params.get(id).clone();
        let mut numeric = Vec::with_capacity(original.len());
        for j in 0..original.len() {
            let mut data = original.data().to_vec();
            data[j] += STEP;
            probe.set(id, Tensor::new(original.shape().to_vec(), data.clone()).unwrap()).unwrap();
            let up = value_at(&probe)?;
            data[j] -= 2.0 * STEP;
            probe.set(id, Tensor::new(original.shape().to_vec(), data).unwrap()).unwrap();
            let down = value_at(&probe)?;
            numeric.push((up - down) / (2.0 * STEP));
        }
        probe.set(id, original).unwrap();
        worst = worst.max(compare(params.name(id), &analytic, &numeric)?);
    }
    Ok(worst)
}

/// Replaces every parameter (peepholes and biases included) with random
/// values so that no gradient path is trivially zero.
pub fn randomise(params: &mut ParamSet, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let shape = params.get(id).shape().to_vec();
        params.set(id, random_tensor(&mut r, &shape, scale)).unwrap();
    }
}

fn inputs(seed: u64, shapes: &[&[usize]], scale: f64) -> Vec<Tensor> {
    let mut r = rng(seed);
    shapes.iter().map(|s| random_tensor(&mut r, s, scale)).collect()
}

/// Values bounded away from zero, for the leaky rectifier's kink.
fn away_from_zero(seed: u64, shape: &[usize]) -> Tensor {
    use rand::Rng;
    let mut r = rng(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = r.random_range(0.1..2.0);
            if r.random_bool(0.5) { mag } else { -mag }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn elementwise() -> Result<f64, String> {
    let x = inputs(1, &[&[3, 4], &[3, 4], &[]], 1.5);
    let mut worst = check_inputs(&x[..2], &|t, v| t.add(v[0], v[1]), 1)?;
    worst = worst.max(check_inputs(&x[..2], &|t, v| t.sub(v[0], v[1]), 2)?);
    worst = worst.max(check_inputs(&x[..2], &|t, v| t.mul(v[0], v[1]), 3)?);
    worst = worst.max(check_inputs(&x[..1], &|t, v| Ok(t.scale(v[0], -2.5)), 4)?);
    worst = worst.max(check_inputs(&x[..1], &|t, v| Ok(t.add_scalar(v[0], 0.7)), 5)?);
    let pair = vec![x[0].clone(), x[2].clone()];
    worst = worst.max(check_inputs(&pair, &|t, v| t.scale_by(v[0], v[1]), 6)?);
    Ok(worst)
}

pub fn activations() -> Result<f64, String> {
    let x = inputs(2, &[&[3, 4]], 3.0);
    let mut worst = check_inputs(&x, &|t, v| Ok(t.sigmoid(v[0])), 7)?;
    worst = worst.max(check_inputs(&x, &|t, v| Ok(t.tanh(v[0])), 8)?);
    let y = vec![away_from_zero(3, &[4, 5])];
    for slope in [0.01, 0.2] {
        worst = worst.max(check_inputs(&y, &|t, v| Ok(t.leaky_relu(v[0], slope)), 9)?);
    }
    Ok(worst)
}

pub fn matmul() -> Result<f64, String> {
    let x = inputs(4, &[&[3, 4], &[4, 5]], 1.0);
    let mut worst = check_inputs(&x, &|t, v| t.matmul(v[0], v[1]), 10)?;
    let y = inputs(5, &[&[1, 6], &[6, 1]], 1.0);
    worst = worst.max(check_inputs(&y, &|t, v| t.matmul(v[0], v[1]), 11)?);
    Ok(worst)
}

pub fn conv2d() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    // (input, kernel, bias, dilation, padding)
    let cases: [(&[usize], &[usize], bool, (usize, usize), (usize, usize)); 5] = [
        (&[2, 5, 6], &[3, 2, 3, 3], true, (1, 1), (1, 1)),
        (&[1, 12, 2], &[2, 1, 3, 1], true, (3, 1), (3, 0)),
        (&[3, 4, 4], &[2, 3, 1, 1], false, (1, 1), (0, 0)),
        (&[2, 7, 5], &[2, 2, 3, 3], true, (2, 1), (0, 0)),
        (&[1, 4, 3], &[1, 1, 2, 2], false, (1, 1), (0, 0)),
    ];
    for (case, (input, kernel, bias, dilation, padding)) in cases.into_iter().enumerate() {
        let mut shapes: Vec<&[usize]> = vec![input, kernel];
        let bias_shape = [kernel[0]];
        if bias {
            shapes.push(&bias_shape);
        }
        let x = inputs(20 + case as u64, &shapes, 1.0);
        let graph = move |t: &mut Tape, v: &[Var]| {
            t.conv2d(v[0], v[1], v.get(2).copied(), dilation, padding)
        };
        worst = worst.max(check_inputs(&x, &graph, 30 + case as u64)?);
    }
    Ok(worst)
}

pub fn reductions() -> Result<f64, String> {
    let x = inputs(6, &[&[2, 3], &[2, 3], &[2, 3]], 1.0);
    let mut worst = check_inputs(&x[..1], &|t, v| Ok(t.sum(v[0])), 12)?;
    worst = worst.max(check_inputs(&x[..2], &|t, v| t.dot(v[0], v[1]), 13)?);
    worst = worst.max(check_inputs(&x[..1], &|t, v| Ok(t.sum_squares(v[0])), 14)?);
    worst = worst.max(check_inputs(&x[..1], &|t, v| t.reshape(v[0], &[3, 1, 2]), 15)?);
    worst = worst.max(check_inputs(&x, &|t, v| t.concat_cols(v), 16)?);
    let stacked = |t: &mut Tape, v: &[Var]| {
        let s: Vec<Var> = v.iter().map(|&x| t.sum_squares(x)).collect();
        t.stack(&s)
    };
    worst = worst.max(check_inputs(&x, &stacked, 17)?);
    let soft = inputs(7, &[&[5]], 2.0);
    worst = worst.max(check_inputs(&soft, &|t, v| Ok(t.softmax(v[0])), 18)?);
    let mut mixed = inputs(8, &[&[3]], 1.0);
    mixed.extend_from_slice(&x);
    let weighted = |t: &mut Tape, v: &[Var]| {
        let w = t.softmax(v[0]);
        t.weighted_sum(w, &v[1..])
    };
    worst = worst.max(check_inputs(&mixed, &weighted, 19)?);
    Ok(worst)
}

pub fn attention() -> Result<f64, String> {
    let states = inputs(9, &[&[1, 2, 2], &[1, 2, 2], &[1, 2, 2]], 1.0);
    let mut worst = check_inputs(&states, &|t, v| Ok(temporal_attention(t, v)?.0), 40)?;
    worst = worst.max(check_inputs(&states, &|t, v| Ok(temporal_attention(t, v)?.1), 41)?);
    Ok(worst)
}

/// Three recurrence steps of a ConvLSTM, loss `Σ H_3`, with respect to
/// every gate kernel, peephole and bias.
pub fn convlstm() -> Result<f64, String> {
    let mut params = ParamSet::new();
    let cell = ConvLstmCell::new(&mut params, "cell", 1, 2, (3, 3), 3, 3, &mut rng(11));
    randomise(&mut params, 12, 0.6);
    let xs = inputs(13, &[&[1, 3, 3], &[1, 3, 3], &[1, 3, 3]], 1.0);
    check_params(&params, &|t, p| {
        let mut state = cell.zero_state(t);
        for x in &xs {
            let x = t.constant(x.clone());
            state = cell.step(t, p, x, state)?;
        }
        Ok(t.sum(state.h))
    })
}

fn squared_error(t: &mut Tape, pred: Var, truth: &Tensor) -> fmuad::Result<Var> {
    let truth = t.constant(truth.clone());
    let diff = t.sub(pred, truth)?;
    Ok(t.sum_squares(diff))
}

pub fn correlation_detector() -> Result<f64, String> {
    let (m, d) = (3, 3);
    let mut params = ParamSet::new();
    let det = CorrelationDetector::new(&mut params, m, 2, (3, 3), &mut rng(14));
    randomise(&mut params, 15, 0.5);
    let history = inputs(16, &vec![&[m, m][..]; d], 1.0);
    let truth = inputs(17, &[&[m, m]], 1.0).remove(0);
    check_params(&params, &|t, p| {
        let pred = det.forecast_signature(t, p, &history)?;
        squared_error(t, pred, &truth)
    })
}

pub fn temporal_detector() -> Result<f64, String> {
    let (m, k, d) = (2, 4, 3);
    let mut params = ParamSet::new();
    let det = TemporalDetector::new(&mut params, m, k, 2, (3, 3), &mut rng(18));
    randomise(&mut params, 19, 0.5);
    let windows = inputs(20, &vec![&[m, k][..]; d], 1.0);
    let truth = inputs(21, &[&[m, k / 2]], 1.0).remove(0);
    check_params(&params, &|t, p| {
        let pred = det.forecast_frequency(t, p, &windows)?;
        squared_error(t, pred, &truth)
    })
}

pub fn spatial_detector() -> Result<f64, String> {
    let (m, len, k) = (2, 24, 4);
    let mut params = ParamSet::new();
    let det = SpatialDetector::new(&mut params, m, len, k, &[2, 3, 4], &[1, 3, 5], 0.01, &mut rng(22));
    randomise(&mut params, 23, 0.5);
    let history = inputs(24, &[&[m, len]], 1.0).remove(0);
    let truth = inputs(25, &[&[m, k]], 1.0).remove(0);
    check_params(&params, &|t, p| {
        let pred = det.forecast_window(t, p, &history)?;
        squared_error(t, pred, &truth)
    })
}

pub fn batch_loss() -> Result<f64, String> {
    let b = 3;
    let preds = inputs(26, &[&[2, 5][..]; 3], 1.0);
    let truths = inputs(27, &[&[2, 5][..]; 3], 1.0);
    let mut worst: f64 = 0.0;
    for term in 0..3 {
        let graph = |t: &mut Tape, v: &[Var]| {
            let ys: Vec<Var> = truths.iter().map(|y| t.constant(y.clone())).collect();
            let terms = record_batch_loss(t, &ys, &v[..b])?;
            Ok([terms.l1, terms.l2, terms.total][term])
        };
        worst = worst.max(check_inputs(&preds, &graph, 42)?);
    }
    Ok(worst)
}

/// All three detectors assembled, loss `‖Y − Ŷ‖²` on one instance.
pub fn full_model() -> Result<f64, String> {
    let mut config = ModelConfig::new(2);
    config.tau = 20;
    config.window = 4;
    config.stride = 4;
    config.hidden_channels = 2;
    config.dilated_channels = vec![2, 2];
    config.dilations = vec![1, 2];
    config.detectors = DetectorSet::ALL;
    let mut model = Fmuad::new(config, 28).map_err(|e| e.to_string())?;
    randomise(model.params_mut(), 29, 0.4);
    let instance = inputs(30, &[&[2, 20]], 1.0).remove(0);
    let truth = model.target(&instance).map_err(|e| e.to_string())?.into_matrix();
    let params = model.params().clone();
    check_params(&params, &|t, p| {
        let pred = model.forward(t, p, &instance)?;
        squared_error(t, pred, &truth)
    })
}

pub const CHECKS: [(&str, Check); 12] = [
    ("elementwise", elementwise),
    ("activations", activations),
    ("matmul", matmul),
    ("conv2d", conv2d),
    ("reductions", reductions),
    ("attention", attention),
    ("convlstm", convlstm),
    ("correlation_detector", correlation_detector),
    ("temporal_detector", temporal_detector),
    ("spatial_detector", spatial_detector),
    ("batch_loss", batch_loss),
    ("full_model", full_model),
];
