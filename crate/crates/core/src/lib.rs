//! Multivariate time-series anomaly detection by forecasting correlation,
//! frequency and value representations of a sliding window.
//!
//! Three detectors share one objective:
//!
//! * a ConvLSTM over signature (cosine similarity) matrices,
//! * a ConvLSTM over per-feature DFT magnitudes,
//! * a stack of dilated convolutions over the raw history.
//!
//! Their forecasts are concatenated into `Ŷ_t = [Ŝ | F̂ | Ŵ]` and the squared
//! forecast error is the anomaly score. Everything runs on a small
//! reverse-mode autodiff [`tape`] over dense `f64` [`tensor`]s.

pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod transforms;

pub use data::{Checkpoint, Dataset, NormStats};
pub use error::{Error, Result};
pub use eval::{select_threshold, EvalReport, ScoreSeries};
pub use model::{DetectorKind, DetectorSet, Fmuad, ModelConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use train::{score_series, train, EpochStats, LossVariant, TrainConfig};
pub use transforms::SeriesMatrix;
