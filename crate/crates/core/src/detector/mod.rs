//! The three pattern-specific forecasting detectors.

pub mod convlstm;
pub mod correlation;
pub mod spatial;
pub mod temporal;

pub use convlstm::{temporal_attention, ConvLstmCell, LstmState, RecurrentForecaster};
pub use correlation::CorrelationDetector;
pub use spatial::{DilatedLayer, SpatialDetector};
pub use temporal::TemporalDetector;
