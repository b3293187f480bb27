//! Datasets: CSV ingestion, min-max normalisation, the synthetic anomaly
//! generator and checkpoint persistence.

pub mod checkpoint;
pub mod csv;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use self::csv::{load_csv_dataset, load_labels, load_series_csv, write_labels, write_series_csv};
pub use synth::{
    default_channels, generate_raw, generate_synthetic, AnomalyKind, AnomalySegment, ChannelSpec, RawSplits, Scenario,
    SyntheticSpec,
};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;
use crate::transforms::SeriesMatrix;

/// Normalised test values are clamped into this range.
pub const TEST_CLAMP: (f64, f64) = (-1.0, 2.0);

/// Per-feature minimum and maximum observed in the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn from_series(series: &SeriesMatrix) -> Result<Self> {
        ensure!(!series.is_empty(), "cannot compute statistics of an empty series");
        let t = series.len();
        let (min, max) = series
            .values()
            .data()
            .chunks_exact(t)
            .map(|row| {
                row.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
            })
            .unzip();
        Ok(NormStats { min, max })
    }

    pub fn features(&self) -> usize {
        self.min.len()
    }

    /// Maps each feature onto `[0, 1]` by the stored range; constant
    /// features map to 0. Results are clamped to `clamp` when given.
    pub fn apply(&self, series: &SeriesMatrix, clamp: Option<(f64, f64)>) -> Result<SeriesMatrix> {
        ensure!(
            series.features() == self.features(),
            "series has {} features, statistics cover {}",
            series.features(),
            self.features()
        );
        let t = series.len();
        let mut out = Vec::with_capacity(series.values().len());
        for (f, row) in series.values().data().chunks_exact(t).enumerate() {
            let (lo, hi) = (self.min[f], self.max[f]);
            let range = hi - lo;
            for &v in row {
                let mut x = if range > 0.0 { (v - lo) / range } else { 0.0 };
                if let Some((a, b)) = clamp {
                    x = x.clamp(a, b);
                }
                out.push(x);
            }
        }
        let normalised = SeriesMatrix::new(Tensor::matrix(series.features(), t, out)?)?;
        match series.feature_names() {
            Some(names) => normalised.with_feature_names(names.to_vec()),
            None => Ok(normalised),
        }
    }
}

/// Normalised train/test splits with test labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: SeriesMatrix,
    pub test: SeriesMatrix,
    pub test_labels: Vec<bool>,
    pub stats: NormStats,
}

impl Dataset {
    /// Normalises raw splits with statistics taken from `train` only.
    pub fn from_raw(train: &SeriesMatrix, test: &SeriesMatrix, test_labels: Vec<bool>) -> Result<Self> {
        ensure!(
            train.features() == test.features(),
            "train has {} features, test has {}",
            train.features(),
            test.features()
        );
        ensure!(
            test_labels.len() == test.len(),
            "{} labels for {} test rows",
            test_labels.len(),
            test.len()
        );
        let stats = NormStats::from_series(train)?;
        Ok(Dataset {
            train: stats.apply(train, None)?,
            test: stats.apply(test, Some(TEST_CLAMP))?,
            test_labels,
            stats,
        })
    }

    pub fn features(&self) -> usize {
        self.train.features()
    }

    pub fn anomaly_ratio(&self) -> f64 {
        self.test_labels.iter().filter(|&&l| l).count() as f64 / self.test_labels.len().max(1) as f64
    }
}
