//! Independent reference checks shared by the integration tests and the
//! acceptance runner. Each check returns the worst error it saw, or a
//! description of the first violation.

#![allow(dead_code)]

pub mod eval;
pub mod grad;
pub mod loss;
pub mod ops;
pub mod transforms;

use std::time::{Duration, Instant};

pub type Check = fn() -> Result<f64, String>;

pub struct SuiteOutcome {
    pub failures: Vec<(&'static str, String)>,
    pub worst: f64,
    pub elapsed: Duration,
    pub checks: usize,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run_suite(checks: &[(&'static str, Check)]) -> SuiteOutcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, check) in checks {
        match check() {
            Ok(err) => worst = worst.max(err),
            Err(msg) => failures.push((*name, msg)),
        }
    }
    SuiteOutcome {
        failures,
        worst,
        elapsed: start.elapsed(),
        checks: checks.len(),
    }
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl rand::Rng, shape: &[usize], scale: f64) -> fmuad::Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    fmuad::Tensor::new(shape.to_vec(), data).unwrap()
}
