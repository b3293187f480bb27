//! Intra-series temporal detector: forecasts the next frequency matrix from
//! the sequence of past frequency matrices.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::params::{Bound, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::transforms::frequency_matrix;

use super::convlstm::RecurrentForecaster;

#[derive(Clone, Debug)]
pub struct TemporalDetector {
    head: RecurrentForecaster,
    m: usize,
    k: usize,
}

impl TemporalDetector {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        m: usize,
        k: usize,
        hidden: usize,
        kernel: (usize, usize),
        rng: &mut R,
    ) -> Self {
        assert!(k % 2 == 0, "window length must be even");
        TemporalDetector {
            head: RecurrentForecaster::new(params, "temporal", m, k / 2, hidden, kernel, rng),
            m,
            k,
        }
    }

    pub fn head(&self) -> &RecurrentForecaster {
        &self.head
    }

    /// Predicts `F̂_t` (`m×k/2`) from precomputed frequency matrices.
    pub fn forecast_from_spectra(
        &self,
        tape: &mut Tape,
        params: &Bound,
        spectra: &[Tensor],
    ) -> Result<Var> {
        ensure!(!spectra.is_empty(), "frequency history must not be empty");
        self.head.forward(tape, params, spectra)
    }

    /// Predicts `F̂_t` from the `d` preceding `m×k` windows.
    pub fn forecast_frequency(
        &self,
        tape: &mut Tape,
        params: &Bound,
        windows: &[Tensor],
    ) -> Result<Var> {
        let spectra = windows
            .iter()
            .map(|w| {
                ensure!(
                    w.shape() == [self.m, self.k],
                    "window has shape {:?}, expected [{}, {}]",
                    w.shape(),
                    self.m,
                    self.k
                );
                frequency_matrix(w)
            })
            .collect::<Result<Vec<_>>>()?;
        self.forecast_from_spectra(tape, params, &spectra)
    }
}
