//! The full detector: configuration, parameter layout, and the joint
//! forward pass producing `Ŷ_t = [Ŝ_t | F̂_t | Ŵ_t]`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detector::{CorrelationDetector, SpatialDetector, TemporalDetector};
use crate::error::{ensure, Error, Result};
use crate::params::{Bound, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::transforms::{
    frequency_matrix, history_window_count, signature_matrix, slice_windows, target_columns,
    ForecastTarget,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DetectorKind {
    Correlation,
    Temporal,
    Spatial,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [
        DetectorKind::Correlation,
        DetectorKind::Temporal,
        DetectorKind::Spatial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Correlation => "correlation",
            DetectorKind::Temporal => "temporal",
            DetectorKind::Spatial => "spatial",
        }
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "correlation" => Ok(DetectorKind::Correlation),
            "temporal" => Ok(DetectorKind::Temporal),
            "spatial" => Ok(DetectorKind::Spatial),
            other => Err(Error::config(
                "detectors",
                format!("unknown detector `{other}` (expected correlation, temporal or spatial)"),
            )),
        }
    }
}

/// Which detectors are enabled. Disabled detectors have their block of the
/// target masked out of both loss and score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DetectorSet {
    pub correlation: bool,
    pub temporal: bool,
    pub spatial: bool,
}

impl DetectorSet {
    pub const ALL: DetectorSet = DetectorSet {
        correlation: true,
        temporal: true,
        spatial: true,
    };

    pub fn only(kind: DetectorKind) -> Self {
        let mut set = DetectorSet {
            correlation: false,
            temporal: false,
            spatial: false,
        };
        set.set(kind, true);
        set
    }

    pub fn contains(&self, kind: DetectorKind) -> bool {
        match kind {
            DetectorKind::Correlation => self.correlation,
            DetectorKind::Temporal => self.temporal,
            DetectorKind::Spatial => self.spatial,
        }
    }

    pub fn set(&mut self, kind: DetectorKind, on: bool) {
        match kind {
            DetectorKind::Correlation => self.correlation = on,
            DetectorKind::Temporal => self.temporal = on,
            DetectorKind::Spatial => self.spatial = on,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.correlation || self.temporal || self.spatial)
    }

    pub fn kinds(&self) -> impl Iterator<Item = DetectorKind> + '_ {
        DetectorKind::ALL.into_iter().filter(|k| self.contains(*k))
    }
}

impl Default for DetectorSet {
    fn default() -> Self {
        DetectorSet::ALL
    }
}

impl fmt::Display for DetectorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.kinds().map(DetectorKind::name).collect();
        write!(f, "{}", names.join(","))
    }
}

impl FromStr for DetectorSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = DetectorSet {
            correlation: false,
            temporal: false,
            spatial: false,
        };
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            set.set(part.parse()?, true);
        }
        if set.is_empty() {
            return Err(Error::config("detectors", "at least one detector must be enabled"));
        }
        Ok(set)
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of features `m`.
    pub features: usize,
    /// Input span `tau`.
    pub tau: usize,
    /// Target window length `k` (even).
    pub window: usize,
    /// Stride `s` between consecutive history windows.
    pub stride: usize,
    pub hidden_channels: usize,
    /// Square ConvLSTM kernel size (odd).
    pub lstm_kernel: usize,
    pub dilated_channels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub leaky_slope: f64,
    pub detectors: DetectorSet,
}

impl ModelConfig {
    pub fn new(features: usize) -> Self {
        ModelConfig {
            features,
            tau: 500,
            window: 30,
            stride: 10,
            hidden_channels: 16,
            lstm_kernel: 3,
            dilated_channels: vec![32, 64, 128],
            dilations: vec![1, 3, 5],
            leaky_slope: 0.01,
            detectors: DetectorSet::ALL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.features == 0 {
            return bad("m", "need at least one feature".into());
        }
        if self.window == 0 || self.window % 2 != 0 {
            return bad("k", format!("window length must be a positive even number, got {}", self.window));
        }
        if self.window >= self.tau {
            return bad("tau", format!("tau={} must exceed k={}", self.tau, self.window));
        }
        if self.stride == 0 {
            return bad("stride", "stride must be at least 1".into());
        }
        if history_window_count(self.tau, self.window, self.stride) == 0 {
            return bad(
                "stride",
                format!(
                    "tau={}, k={}, s={} leaves no history windows",
                    self.tau, self.window, self.stride
                ),
            );
        }
        if self.hidden_channels == 0 {
            return bad("hidden_ch", "must be at least 1".into());
        }
        if self.lstm_kernel % 2 == 0 {
            return bad("lstm_kernel", "must be odd for same-padding".into());
        }
        if self.dilated_channels.is_empty() || self.dilated_channels.contains(&0) {
            return bad("channels", format!("invalid channel list {:?}", self.dilated_channels));
        }
        if self.dilations.len() != self.dilated_channels.len() || self.dilations.contains(&0) {
            return bad(
                "dilations",
                format!(
                    "need one positive dilation per layer, got {:?} for {} layers",
                    self.dilations,
                    self.dilated_channels.len()
                ),
            );
        }
        let reach: usize = self.dilations.iter().map(|d| 2 * d).sum::<usize>() + 1;
        if self.tau - self.window < reach {
            return bad(
                "tau",
                format!(
                    "history length {} is shorter than the dilated receptive field {reach}",
                    self.tau - self.window
                ),
            );
        }
        if self.detectors.is_empty() {
            return bad("detectors", "at least one detector must be enabled".into());
        }
        Ok(())
    }

    pub fn history_windows(&self) -> usize {
        history_window_count(self.tau, self.window, self.stride)
    }

    pub fn target_columns(&self) -> usize {
        target_columns(self.features, self.window)
    }
}

/// The complete detector with its parameters.
#[derive(Clone, Debug)]
pub struct Fmuad {
    config: ModelConfig,
    params: ParamSet,
    correlation: Option<CorrelationDetector>,
    temporal: Option<TemporalDetector>,
    spatial: Option<SpatialDetector>,
}

impl Fmuad {
    /// Builds a freshly initialised model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let m = config.features;
        let kernel = (config.lstm_kernel, config.lstm_kernel);
        let correlation = config.detectors.correlation.then(|| {
            CorrelationDetector::new(&mut params, m, config.hidden_channels, kernel, &mut rng)
        });
        let temporal = config.detectors.temporal.then(|| {
            TemporalDetector::new(
                &mut params,
                m,
                config.window,
                config.hidden_channels,
                kernel,
                &mut rng,
            )
        });
        let spatial = config.detectors.spatial.then(|| {
            SpatialDetector::new(
                &mut params,
                m,
                config.tau - config.window,
                config.window,
                &config.dilated_channels,
                &config.dilations,
                config.leaky_slope,
                &mut rng,
            )
        });
        Ok(Fmuad {
            config,
            params,
            correlation,
            temporal,
            spatial,
        })
    }

    /// Rebuilds a model from stored parameters, checking that every
    /// expected tensor is present with the right shape.
    pub fn from_params(config: ModelConfig, stored: ParamSet) -> Result<Self> {
        let mut model = Fmuad::new(config, 0)?;
        ensure!(
            stored.len() == model.params.len(),
            "stored model has {} parameter tensors, configuration expects {}",
            stored.len(),
            model.params.len()
        );
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let src = stored
                .find(&name)
                .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
            model.params.set(id, stored.get(src).clone())?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn correlation(&self) -> Option<&CorrelationDetector> {
        self.correlation.as_ref()
    }

    pub fn temporal(&self) -> Option<&TemporalDetector> {
        self.temporal.as_ref()
    }

    pub fn spatial(&self) -> Option<&SpatialDetector> {
        self.spatial.as_ref()
    }

    fn check_instance(&self, instance: &Tensor) -> Result<()> {
        ensure!(
            instance.shape() == [self.config.features, self.config.tau],
            "instance has shape {:?}, model expects [{}, {}]",
            instance.shape(),
            self.config.features,
            self.config.tau
        );
        Ok(())
    }

    /// The ground truth `Y_t` for an instance, with disabled blocks zeroed.
    pub fn target(&self, instance: &Tensor) -> Result<ForecastTarget> {
        self.check_instance(instance)?;
        let k = self.config.window;
        let w = instance.columns(self.config.tau - k, self.config.tau)?;
        let full = ForecastTarget::build(&w)?;
        if self.config.detectors == DetectorSet::ALL {
            return Ok(full);
        }
        let m = self.config.features;
        let zero = |cols: usize| Tensor::from_parts(vec![m, cols], vec![0.0; m * cols]);
        let d = self.config.detectors;
        let s = if d.correlation { full.signature() } else { zero(m) };
        let f = if d.temporal { full.frequency() } else { zero(k / 2) };
        let wb = if d.spatial { full.window() } else { zero(k) };
        ForecastTarget::from_matrix(hconcat(&[&s, &f, &wb]), k)
    }

    /// Records the forecast `Ŷ_t` (`m×n`) for one instance on `tape`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, instance: &Tensor) -> Result<Var> {
        self.check_instance(instance)?;
        let ModelConfig {
            features: m,
            tau,
            window: k,
            stride,
            ..
        } = self.config;
        let windows = slice_windows(instance, k, stride)?;
        let zero = |tape: &mut Tape, cols: usize| {
            tape.constant(Tensor::from_parts(vec![m, cols], vec![0.0; m * cols]))
        };

        let s_hat = match &self.correlation {
            Some(det) => {
                let sigs = windows
                    .history
                    .iter()
                    .map(signature_matrix)
                    .collect::<Result<Vec<_>>>()?;
                det.forecast_signature(tape, p, &sigs)?
            }
            None => zero(tape, m),
        };
        let f_hat = match &self.temporal {
            Some(det) => {
                let spectra = windows
                    .history
                    .iter()
                    .map(frequency_matrix)
                    .collect::<Result<Vec<_>>>()?;
                det.forecast_from_spectra(tape, p, &spectra)?
            }
            None => zero(tape, k / 2),
        };
        let w_hat = match &self.spatial {
            Some(det) => {
                let history = instance.columns(0, tau - k)?;
                det.forecast_window(tape, p, &history)?
            }
            None => zero(tape, k),
        };
        tape.concat_cols(&[s_hat, f_hat, w_hat])
    }

    /// Forecast for one instance without keeping gradients.
    pub fn predict(&self, instance: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let y = self.forward(&mut tape, &p, instance)?;
        Ok(tape.value(y).clone())
    }

    /// Anomaly score of one instance: squared forecast error of `Y_t`.
    pub fn score_instance(&self, instance: &Tensor) -> Result<f64> {
        let truth = self.target(instance)?;
        let pred = self.predict(instance)?;
        crate::loss::anomaly_score(&truth, &pred)
    }
}

fn hconcat(parts: &[&Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            let c = p.cols();
            out.extend_from_slice(&p.data()[r * c..(r + 1) * c]);
        }
    }
    Tensor::from_parts(vec![rows, cols], out)
}
