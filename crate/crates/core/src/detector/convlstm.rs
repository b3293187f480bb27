//! Convolutional LSTM cell with peephole connections, temporal attention
//! over its hidden states, and the 1×1-conv + fully-connected read-out
//! shared by the correlation and temporal detectors.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::params::{Bound, ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const GATES: [&str; 4] = ["i", "f", "c", "o"];

/// Parameters of one ConvLSTM cell.
///
/// Gate order in every array is input, forget, cell, output. Peephole
/// weights exist for the input, forget and output gates and have the shape
/// of the cell state.
#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    in_channels: usize,
    hidden: usize,
    kernel: (usize, usize),
    rows: usize,
    cols: usize,
    input_kernels: [ParamId; 4],
    hidden_kernels: [ParamId; 4],
    peepholes: [ParamId; 3],
    biases: [ParamId; 4],
}

/// Hidden and cell state, each `hidden×rows×cols`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl ConvLstmCell {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        in_channels: usize,
        hidden: usize,
        kernel: (usize, usize),
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Self {
        assert!(
            kernel.0 % 2 == 1 && kernel.1 % 2 == 1,
            "same-padding needs odd kernel sizes"
        );
        let (kh, kw) = kernel;
        let input_kernels = GATES.map(|g| {
            params.add_glorot(
                format!("{prefix}.w_x{g}"),
                &[hidden, in_channels, kh, kw],
                in_channels * kh * kw,
                hidden * kh * kw,
                rng,
            )
        });
        let hidden_kernels = GATES.map(|g| {
            params.add_glorot(
                format!("{prefix}.w_h{g}"),
                &[hidden, hidden, kh, kw],
                hidden * kh * kw,
                hidden * kh * kw,
                rng,
            )
        });
        let peepholes =
            ["i", "f", "o"].map(|g| params.add_zeros(format!("{prefix}.w_c{g}"), &[hidden, rows, cols]));
        let biases = GATES.map(|g| params.add_zeros(format!("{prefix}.b_{g}"), &[hidden]));
        ConvLstmCell {
            in_channels,
            hidden,
            kernel,
            rows,
            cols,
            input_kernels,
            hidden_kernels,
            peepholes,
            biases,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn state_shape(&self) -> [usize; 3] {
        [self.hidden, self.rows, self.cols]
    }

    /// `H_0 = C_0 = 0`.
    pub fn zero_state(&self, tape: &mut Tape) -> LstmState {
        let zeros = Tensor::from_parts(
            self.state_shape().to_vec(),
            vec![0.0; self.hidden * self.rows * self.cols],
        );
        LstmState {
            h: tape.constant(zeros.clone()),
            c: tape.constant(zeros),
        }
    }

    fn padding(&self) -> (usize, usize) {
        (self.kernel.0 / 2, self.kernel.1 / 2)
    }

    /// `W_x* X + W_h* H + b` for one gate.
    fn gate_preactivation(
        &self,
        tape: &mut Tape,
        p: &Bound,
        gate: usize,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let pad = self.padding();
        let bias = Some(p.var(self.biases[gate]));
        let from_x = tape.conv2d(x, p.var(self.input_kernels[gate]), bias, (1, 1), pad)?;
        let from_h = tape.conv2d(h, p.var(self.hidden_kernels[gate]), None, (1, 1), pad)?;
        tape.add(from_x, from_h)
    }

    /// One recurrence step on an `in_channels×rows×cols` input.
    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, prev: LstmState) -> Result<LstmState> {
        let shape = tape.value(x).shape();
        ensure!(
            shape == [self.in_channels, self.rows, self.cols],
            "ConvLSTM input has shape {shape:?}, expected {:?}",
            [self.in_channels, self.rows, self.cols]
        );

        let peep = |tape: &mut Tape, idx: usize, c: Var| tape.mul(p.var(self.peepholes[idx]), c);

        let pre_i = self.gate_preactivation(tape, p, 0, x, prev.h)?;
        let peep_i = peep(tape, 0, prev.c)?;
        let pre_i = tape.add(pre_i, peep_i)?;
        let i = tape.sigmoid(pre_i);

        let pre_f = self.gate_preactivation(tape, p, 1, x, prev.h)?;
        let peep_f = peep(tape, 1, prev.c)?;
        let pre_f = tape.add(pre_f, peep_f)?;
        let f = tape.sigmoid(pre_f);

        let pre_c = self.gate_preactivation(tape, p, 2, x, prev.h)?;
        let candidate = tape.tanh(pre_c);
        let kept = tape.mul(f, prev.c)?;
        let written = tape.mul(i, candidate)?;
        let c = tape.add(kept, written)?;

        let pre_o = self.gate_preactivation(tape, p, 3, x, prev.h)?;
        let peep_o = peep(tape, 2, c)?;
        let pre_o = tape.add(pre_o, peep_o)?;
        let o = tape.sigmoid(pre_o);

        let c_act = tape.tanh(c);
        let h = tape.mul(o, c_act)?;
        Ok(LstmState { h, c })
    }
}

/// Attention over hidden states, queried by the most recent one.
///
/// Returns `H* = Σ c_i H_i` together with the weight vector `c`, where
/// `c = softmax(⟨vec H_i, vec H_last⟩)`.
pub fn temporal_attention(tape: &mut Tape, states: &[Var]) -> Result<(Var, Var)> {
    ensure!(!states.is_empty(), "attention needs at least one hidden state");
    let query = *states.last().expect("nonempty");
    let mut logits = Vec::with_capacity(states.len());
    for &h in states {
        logits.push(tape.dot(h, query)?);
    }
    let logits = tape.stack(&logits)?;
    let weights = tape.softmax(logits);
    let combined = tape.weighted_sum(weights, states)?;
    Ok((combined, weights))
}

/// ConvLSTM → attention → 1×1 conv → FC, forecasting the next `rows×cols`
/// matrix of a sequence.
#[derive(Clone, Debug)]
pub struct RecurrentForecaster {
    cell: ConvLstmCell,
    projection: ParamId,
    fc_weight: ParamId,
    fc_bias: ParamId,
    rows: usize,
    cols: usize,
}

impl RecurrentForecaster {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        rows: usize,
        cols: usize,
        hidden: usize,
        kernel: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let cell = ConvLstmCell::new(
            params,
            &format!("{prefix}.lstm"),
            1,
            hidden,
            kernel,
            rows,
            cols,
            rng,
        );
        let projection =
            params.add_glorot(format!("{prefix}.proj"), &[1, hidden, 1, 1], hidden, 1, rng);
        let n = rows * cols;
        let fc_weight = params.add_glorot(format!("{prefix}.fc_w"), &[n, n], n, n, rng);
        let fc_bias = params.add_zeros(format!("{prefix}.fc_b"), &[n, 1]);
        RecurrentForecaster {
            cell,
            projection,
            fc_weight,
            fc_bias,
            rows,
            cols,
        }
    }

    pub fn cell(&self) -> &ConvLstmCell {
        &self.cell
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn fc_bias(&self) -> ParamId {
        self.fc_bias
    }

    /// Unrolls the cell over `sequence`, attends over all hidden states and
    /// projects to a `rows×cols` forecast.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, sequence: &[Tensor]) -> Result<Var> {
        ensure!(!sequence.is_empty(), "forecast needs at least one history matrix");
        let mut state = self.cell.zero_state(tape);
        let mut hidden = Vec::with_capacity(sequence.len());
        for m in sequence {
            ensure!(
                m.shape() == [self.rows, self.cols],
                "sequence matrix has shape {:?}, expected [{}, {}]",
                m.shape(),
                self.rows,
                self.cols
            );
            let x = tape.constant(m.reshape(&[1, self.rows, self.cols])?);
            state = self.cell.step(tape, p, x, state)?;
            hidden.push(state.h);
        }
        let (combined, _) = temporal_attention(tape, &hidden)?;
        let projected = tape.conv2d(combined, p.var(self.projection), None, (1, 1), (0, 0))?;
        let flat = tape.reshape(projected, &[self.rows * self.cols, 1])?;
        let fc = tape.matmul(p.var(self.fc_weight), flat)?;
        let out = tape.add(fc, p.var(self.fc_bias))?;
        tape.reshape(out, &[self.rows, self.cols])
    }
}
