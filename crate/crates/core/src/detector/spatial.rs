//! Multi-scale spatial detector: a stack of dilated `(3, 1)` convolutions
//! over the long history segment, decoded by a 1×1 conv and an FC layer
//! into the forecast of the target window.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::params::{Bound, ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Kernel extent along time; the feature axis always has width 1.
pub const TIME_KERNEL: usize = 3;

/// One dilated convolution followed by a leaky rectifier.
#[derive(Clone, Debug)]
pub struct DilatedLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub dilation: usize,
    pub slope: f64,
}

impl DilatedLayer {
    /// `x` is `C×time×features`; the output keeps time and feature extents.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let pad = self.dilation * (TIME_KERNEL - 1) / 2;
        let y = tape.conv2d(
            x,
            p.var(self.kernel),
            Some(p.var(self.bias)),
            (self.dilation, 1),
            (pad, 0),
        )?;
        Ok(tape.leaky_relu(y, self.slope))
    }
}

#[derive(Clone, Debug)]
pub struct SpatialDetector {
    layers: Vec<DilatedLayer>,
    projection: ParamId,
    fc_weight: ParamId,
    fc_bias: ParamId,
    m: usize,
    history_len: usize,
    k: usize,
}

impl SpatialDetector {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        m: usize,
        history_len: usize,
        k: usize,
        channels: &[usize],
        dilations: &[usize],
        slope: f64,
        rng: &mut R,
    ) -> Self {
        assert_eq!(channels.len(), dilations.len(), "one dilation per layer");
        assert!(!channels.is_empty(), "at least one dilated layer");
        let mut layers = Vec::with_capacity(channels.len());
        let mut c_in = 1;
        for (i, (&c_out, &dilation)) in channels.iter().zip(dilations).enumerate() {
            let kernel = params.add_glorot(
                format!("spatial.conv{i}.w"),
                &[c_out, c_in, TIME_KERNEL, 1],
                c_in * TIME_KERNEL,
                c_out * TIME_KERNEL,
                rng,
            );
            let bias = params.add_zeros(format!("spatial.conv{i}.b"), &[c_out]);
            layers.push(DilatedLayer {
                kernel,
                bias,
                dilation,
                slope,
            });
            c_in = c_out;
        }
        let projection = params.add_glorot("spatial.proj", &[1, c_in, 1, 1], c_in, 1, rng);
        let (n_in, n_out) = (m * history_len, m * k);
        let fc_weight = params.add_glorot("spatial.fc_w", &[n_out, n_in], n_in, n_out, rng);
        let fc_bias = params.add_zeros("spatial.fc_b", &[n_out, 1]);
        SpatialDetector {
            layers,
            projection,
            fc_weight,
            fc_bias,
            m,
            history_len,
            k,
        }
    }

    pub fn layers(&self) -> &[DilatedLayer] {
        &self.layers
    }

    pub fn fc_bias(&self) -> ParamId {
        self.fc_bias
    }

    /// Time steps that can influence one output position of the stack.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| l.dilation * (TIME_KERNEL - 1))
            .sum::<usize>()
    }

    /// Converts an `m×L` history into the `1×L×m` layout the stack expects.
    pub fn history_input(history: &Tensor) -> Result<Tensor> {
        ensure!(history.shape().len() == 2, "history must be a matrix");
        let t = history.transpose()?;
        t.reshape(&[1, history.cols(), history.rows()])
    }

    /// Runs the dilated stack only, returning `C_last×L×m` features.
    pub fn features(&self, tape: &mut Tape, p: &Bound, history: &Tensor) -> Result<Var> {
        ensure!(
            history.shape() == [self.m, self.history_len],
            "history has shape {:?}, expected [{}, {}]",
            history.shape(),
            self.m,
            self.history_len
        );
        let mut x = tape.constant(Self::history_input(history)?);
        for layer in &self.layers {
            x = layer.forward(tape, p, x)?;
        }
        Ok(x)
    }

    /// Predicts `Ŵ_t` (`m×k`) from the `m×(tau−k)` history segment.
    pub fn forecast_window(&self, tape: &mut Tape, p: &Bound, history: &Tensor) -> Result<Var> {
        let features = self.features(tape, p, history)?;
        let projected = tape.conv2d(features, p.var(self.projection), None, (1, 1), (0, 0))?;
        let flat = tape.reshape(projected, &[self.m * self.history_len, 1])?;
        let fc = tape.matmul(p.var(self.fc_weight), flat)?;
        let out = tape.add(fc, p.var(self.fc_bias))?;
        tape.reshape(out, &[self.m, self.k])
    }
}
