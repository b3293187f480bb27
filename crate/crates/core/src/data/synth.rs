//! Synthetic multivariate sinusoids with injected anomalies of known kind.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::transforms::SeriesMatrix;

use super::Dataset;

const SPIKE_SIGMAS: f64 = 6.0;
const DRIFT_SIGMAS: f64 = 1.5;
const MAX_SPIKE_STEPS: usize = 3;
const TARGET_RATIO: f64 = 0.05;
const SEGMENT_LEN: usize = 80;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    /// The channel runs at twice its base frequency.
    FrequencyChange,
    /// A coupled channel flips the sign of its coupling.
    CorrelationChange,
    /// A spike of several standard deviations lasting 1 to 3 steps.
    AbruptValue,
    /// A linear drift away from the normal level.
    SubtleValue,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [
        AnomalyKind::FrequencyChange,
        AnomalyKind::CorrelationChange,
        AnomalyKind::AbruptValue,
        AnomalyKind::SubtleValue,
    ];
}

/// One labelled anomaly, covering test steps `start..end` on `channel`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySegment {
    pub start: usize,
    pub end: usize,
    pub kind: AnomalyKind,
    pub channel: usize,
}

/// A sinusoidal channel. A coupled channel reuses the phase of its source
/// and multiplies it by `sign`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub period: f64,
    pub amplitude: f64,
    pub noise: f64,
    pub coupled_to: Option<(usize, f64)>,
}

impl ChannelSpec {
    fn sigma(&self) -> f64 {
        (self.amplitude * self.amplitude / 2.0 + self.noise * self.noise).sqrt()
    }
}

/// Which anomaly kinds a planned test split contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Every kind, in equal numbers.
    Mixed,
    Correlation,
    Frequency,
    /// Abrupt and subtle value anomalies.
    Value,
    None,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mixed" => Ok(Scenario::Mixed),
            "correlation" => Ok(Scenario::Correlation),
            "frequency" => Ok(Scenario::Frequency),
            "value" => Ok(Scenario::Value),
            "none" => Ok(Scenario::None),
            other => Err(Error::config(
                "scenario",
                format!("unknown scenario `{other}`; expected mixed, correlation, frequency, value or none"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train_len: usize,
    pub test_len: usize,
    pub seed: u64,
    pub channels: Vec<ChannelSpec>,
    pub segments: Vec<AnomalySegment>,
}

/// Five-channel default: two independent carriers each with a coupled
/// partner, plus one free channel. Periods are non-integer so that windows
/// taken at a fixed stride do not all share one phase.
pub fn default_channels(m: usize) -> Vec<ChannelSpec> {
    const PERIODS: [f64; 6] = [17.3, 11.9, 11.9, 31.7, 11.9, 23.3];
    (0..m)
        .map(|i| ChannelSpec {
            period: PERIODS[i % PERIODS.len()] + (i / PERIODS.len()) as f64 * 2.9,
            amplitude: 1.0,
            noise: 0.1,
            coupled_to: match i {
                1 => Some((0, -1.0)),
                4 => Some((2, 1.0)),
                _ => None,
            },
        })
        .collect()
}

impl SyntheticSpec {
    /// Plans evenly spaced segments of the kinds in `scenario`, all at or
    /// after `warmup` steps into the test split.
    pub fn scenario(
        m: usize,
        train_len: usize,
        test_len: usize,
        seed: u64,
        scenario: Scenario,
        warmup: usize,
    ) -> Result<Self> {
        let channels = default_channels(m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5e65);
        let target = TARGET_RATIO * test_len as f64;
        let mut kinds: Vec<(AnomalyKind, usize)> = Vec::new();
        let spike = |rng: &mut ChaCha8Rng| rng.random_range(1..=MAX_SPIKE_STEPS);
        // Short test splits get shorter segments so the anomalous fraction
        // stays near the target.
        let seg_len = |groups: usize| SEGMENT_LEN.min(((target / groups as f64) as usize).max(2));
        match scenario {
            Scenario::None => {}
            Scenario::Mixed => {
                let len = seg_len(3);
                let per_kind = ((target / (3 * len) as f64).round() as usize).max(1);
                for _ in 0..per_kind {
                    for kind in AnomalyKind::ALL {
                        let len = if kind == AnomalyKind::AbruptValue { spike(&mut rng) } else { len };
                        kinds.push((kind, len));
                    }
                }
            }
            Scenario::Correlation | Scenario::Frequency => {
                let kind = if scenario == Scenario::Correlation {
                    AnomalyKind::CorrelationChange
                } else {
                    AnomalyKind::FrequencyChange
                };
                let len = seg_len(1);
                let count = ((target / len as f64).round() as usize).max(1);
                kinds.extend(std::iter::repeat_n((kind, len), count));
            }
            Scenario::Value => {
                let len = seg_len(1);
                let count = ((target / len as f64).round() as usize).max(1);
                for _ in 0..count {
                    kinds.push((AnomalyKind::SubtleValue, len));
                    kinds.push((AnomalyKind::AbruptValue, spike(&mut rng)));
                }
            }
        }

        let span = test_len.saturating_sub(warmup);
        let slot = if kinds.is_empty() { 0 } else { span / kinds.len() };
        let coupled: Vec<usize> = (0..m).filter(|&c| channels[c].coupled_to.is_some()).collect();
        let sources: Vec<usize> = channels.iter().filter_map(|c| c.coupled_to.map(|(s, _)| s)).collect();
        let free: Vec<usize> = (0..m)
            .filter(|c| !sources.contains(c) && !coupled.contains(c))
            .collect();
        let mut counters = [0usize; 4];
        let mut segments = Vec::with_capacity(kinds.len());
        for (i, &(kind, len)) in kinds.iter().enumerate() {
            let idx = AnomalyKind::ALL.iter().position(|&k| k == kind).unwrap();
            let n = counters[idx];
            counters[idx] += 1;
            let channel = match kind {
                AnomalyKind::CorrelationChange => *coupled.get(n % coupled.len().max(1)).ok_or_else(|| {
                    Error::config("m", "correlation anomalies need a coupled channel (m >= 2)")
                })?,
                AnomalyKind::FrequencyChange => {
                    if free.is_empty() {
                        n % m
                    } else {
                        free[n % free.len()]
                    }
                }
                _ => (i + n) % m,
            };
            let start = warmup + i * slot + slot.saturating_sub(len) / 2;
            segments.push(AnomalySegment {
                start,
                end: start + len,
                kind,
                channel,
            });
        }
        let spec = SyntheticSpec {
            train_len,
            test_len,
            seed,
            channels,
            segments,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn features(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.channels.len();
        if m == 0 {
            return Err(Error::config("m", "need at least one channel"));
        }
        if self.train_len == 0 || self.test_len == 0 {
            return Err(Error::config("T", "train and test lengths must be positive"));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if !(c.period > 0.0 && c.period.is_finite()) {
                return Err(Error::config("period", format!("channel {i} has period {}", c.period)));
            }
            if !(c.amplitude >= 0.0 && c.noise >= 0.0) {
                return Err(Error::config("noise", format!("channel {i} has a negative scale")));
            }
            if let Some((src, _)) = c.coupled_to {
                if src >= m || src == i || self.channels[src].coupled_to.is_some() {
                    return Err(Error::config(
                        "coupled_to",
                        format!("channel {i} must couple to an uncoupled channel, got {src}"),
                    ));
                }
            }
        }
        let mut sorted: Vec<_> = self.segments.clone();
        sorted.sort_by_key(|s| s.start);
        for s in &sorted {
            if s.start >= s.end || s.end > self.test_len || s.channel >= m {
                return Err(Error::config(
                    "segments",
                    format!("segment {}..{} on channel {} is out of range", s.start, s.end, s.channel),
                ));
            }
            if s.kind == AnomalyKind::CorrelationChange && self.channels[s.channel].coupled_to.is_none() {
                return Err(Error::config(
                    "segments",
                    format!("correlation anomaly on uncoupled channel {}", s.channel),
                ));
            }
        }
        for w in sorted.windows(2) {
            if w[1].start < w[0].end {
                return Err(Error::config(
                    "segments",
                    format!("segments at {} and {} overlap", w[0].start, w[1].start),
                ));
            }
        }
        if !self.segments.is_empty() {
            let covered: usize = self.segments.iter().map(|s| s.end - s.start).sum();
            let ratio = covered as f64 / self.test_len as f64;
            if !(0.01..=0.15).contains(&ratio) {
                return Err(Error::config(
                    "segments",
                    format!("anomalous fraction {ratio:.4} is outside [0.01, 0.15]"),
                ));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<bool> {
        let mut labels = vec![false; self.test_len];
        for s in &self.segments {
            labels[s.start..s.end].iter_mut().for_each(|l| *l = true);
        }
        labels
    }
}

/// Raw (unnormalised) train and test splits.
pub struct RawSplits {
    pub train: SeriesMatrix,
    pub test: SeriesMatrix,
    pub labels: Vec<bool>,
}

fn render(spec: &SyntheticSpec, len: usize, stream: u64, segments: &[AnomalySegment]) -> Result<SeriesMatrix> {
    let m = spec.channels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut phase: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..TAU)).collect();
    let noise: Vec<Normal<f64>> = spec
        .channels
        .iter()
        .map(|c| Normal::new(0.0, c.noise).map_err(|e| Error::config("noise", e.to_string())))
        .collect::<Result<_>>()?;

    // Per-step modifiers, resolved once from the segment list.
    let mut freq_factor = vec![vec![1.0; len]; m];
    let mut sign = vec![vec![1.0; len]; m];
    let mut offset = vec![vec![0.0; len]; m];
    for s in segments {
        let c = s.channel;
        let sigma = spec.channels[c].sigma();
        let steps = s.end - s.start;
        match s.kind {
            AnomalyKind::FrequencyChange => freq_factor[c][s.start..s.end].fill(2.0),
            AnomalyKind::CorrelationChange => sign[c][s.start..s.end].fill(-1.0),
            AnomalyKind::AbruptValue => {
                let spike = steps.min(MAX_SPIKE_STEPS);
                offset[c][s.start..s.start + spike].fill(SPIKE_SIGMAS * sigma);
            }
            AnomalyKind::SubtleValue => {
                for i in 0..steps {
                    offset[c][s.start + i] = DRIFT_SIGMAS * sigma * (i + 1) as f64 / steps as f64;
                }
            }
        }
    }

    let mut values = vec![0.0; m * len];
    for t in 0..len {
        for c in 0..m {
            let ch = &spec.channels[c];
            let clean = match ch.coupled_to {
                Some((src, coupling)) => coupling * sign[c][t] * ch.amplitude * phase[src].sin(),
                None => ch.amplitude * phase[c].sin(),
            };
            values[c * len + t] = clean + offset[c][t] + noise[c].sample(&mut rng);
        }
        for c in 0..m {
            if spec.channels[c].coupled_to.is_none() {
                phase[c] = (phase[c] + TAU * freq_factor[c][t] / spec.channels[c].period) % TAU;
            }
        }
    }
    SeriesMatrix::new(Tensor::matrix(m, len, values)?)
}

/// Generates raw splits. Train and test use separate RNG streams, so the
/// training split depends only on the seed and channel layout.
pub fn generate_raw(spec: &SyntheticSpec) -> Result<RawSplits> {
    spec.validate()?;
    Ok(RawSplits {
        train: render(spec, spec.train_len, 0, &[])?,
        test: render(spec, spec.test_len, 1, &spec.segments)?,
        labels: spec.labels(),
    })
}

/// Generates and normalises a labelled dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let raw = generate_raw(spec)?;
    Dataset::from_raw(&raw.train, &raw.test, raw.labels)
}
