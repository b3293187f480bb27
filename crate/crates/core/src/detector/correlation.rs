//! Inter-series correlation detector: forecasts the next signature matrix
//! from the sequence of past signature matrices.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::params::{Bound, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::transforms::signature_matrix;

use super::convlstm::RecurrentForecaster;

#[derive(Clone, Debug)]
pub struct CorrelationDetector {
    head: RecurrentForecaster,
    m: usize,
}

impl CorrelationDetector {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        m: usize,
        hidden: usize,
        kernel: (usize, usize),
        rng: &mut R,
    ) -> Self {
        CorrelationDetector {
            head: RecurrentForecaster::new(params, "correlation", m, m, hidden, kernel, rng),
            m,
        }
    }

    pub fn head(&self) -> &RecurrentForecaster {
        &self.head
    }

    /// Predicts `Ŝ_t` (`m×m`) from the `d` preceding signature matrices.
    pub fn forecast_signature(
        &self,
        tape: &mut Tape,
        params: &Bound,
        history: &[Tensor],
    ) -> Result<Var> {
        ensure!(!history.is_empty(), "signature history must not be empty");
        self.head.forward(tape, params, history)
    }

    /// Same as [`forecast_signature`](Self::forecast_signature), starting
    /// from the raw `m×k` history windows.
    pub fn forecast_from_windows(
        &self,
        tape: &mut Tape,
        params: &Bound,
        windows: &[Tensor],
    ) -> Result<Var> {
        let sigs = windows
            .iter()
            .map(|w| {
                ensure!(w.rows() == self.m, "window has {} rows, expected {}", w.rows(), self.m);
                signature_matrix(w)
            })
            .collect::<Result<Vec<_>>>()?;
        self.forecast_signature(tape, params, &sigs)
    }
}
