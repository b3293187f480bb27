//! Adaptive-moment (Adam) optimizer with bias correction.

use crate::error::{ensure, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: one pair of moment accumulators per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step_count: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = |t: &Tensor| vec![0.0; t.len()];
        Adam {
            config,
            first: params.tensors().iter().map(zeros).collect(),
            second: params.tensors().iter().map(zeros).collect(),
            step_count: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update. `grads` must hold one gradient per parameter, in
    /// the parameter set's order.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        ensure!(
            grads.len() == params.len(),
            "optimizer received {} gradients for {} parameters",
            grads.len(),
            params.len()
        );
        ensure!(
            self.first.len() == params.len(),
            "optimizer state was built for {} parameters, got {}",
            self.first.len(),
            params.len()
        );
        for (id, g) in params.ids().zip(grads) {
            ensure!(
                g.shape() == params.get(id).shape(),
                "gradient for `{}` has shape {:?}, expected {:?}",
                params.name(id),
                g.shape(),
                params.get(id).shape()
            );
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let current = params.get(id);
            let mut next = current.data().to_vec();
            for (((p, &g), m), v) in next.iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            let shape = current.shape().to_vec();
            params.set(id, Tensor::from_parts(shape, next))?;
        }
        Ok(())
    }
}
