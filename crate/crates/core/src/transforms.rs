//! Windowing of a multivariate series and the two representation
//! transforms: cosine signature matrices and DFT frequency matrices.

use std::f64::consts::PI;

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Rows with a Euclidean norm below this are treated as all-zero.
pub const ZERO_NORM: f64 = 1e-12;

/// An `m×T` multivariate series: one row per feature, one column per time
/// step.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesMatrix {
    values: Tensor,
    feature_names: Option<Vec<String>>,
}

impl SeriesMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        ensure!(
            values.shape().len() == 2,
            "a series must be an m×T matrix, got shape {:?}",
            values.shape()
        );
        Ok(SeriesMatrix {
            values,
            feature_names: None,
        })
    }

    /// Builds a series from rows of time steps (`T` rows of `m` values).
    pub fn from_time_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SeriesMatrix::new(Tensor::from_rows(rows)?.transpose()?)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        ensure!(
            names.len() == self.features(),
            "{} feature names for {} features",
            names.len(),
            self.features()
        );
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn features(&self) -> usize {
        self.values.rows()
    }

    pub fn len(&self) -> usize {
        self.values.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The input instance `I_t`: the `tau` columns ending at time `t`.
    pub fn instance(&self, t: usize, tau: usize) -> Result<Tensor> {
        ensure!(tau >= 1, "input span must be positive");
        ensure!(
            t + 1 >= tau && t < self.len(),
            "time {t} has no full span of {tau} steps in a series of length {}",
            self.len()
        );
        self.values.columns(t + 1 - tau, t + 1)
    }

    /// The instance ending at `t`, split into history and target window.
    pub fn window(&self, t: usize, tau: usize, k: usize) -> Result<WindowView> {
        ensure!(k < tau, "window length {k} must be shorter than the span {tau}");
        let instance = self.instance(t, tau)?;
        Ok(WindowView {
            t,
            history: instance.columns(0, tau - k)?,
            target: instance.columns(tau - k, tau)?,
            instance,
        })
    }
}

/// The pieces of one input instance.
#[derive(Clone, Debug)]
pub struct WindowView {
    pub t: usize,
    /// `W_t`: the last `k` steps, `m×k`.
    pub target: Tensor,
    /// `W_t^h`: the preceding `tau − k` steps.
    pub history: Tensor,
    /// `I_t = [W_t^h ; W_t]`, `m×tau`.
    pub instance: Tensor,
}

/// The strided windows cut from one instance.
#[derive(Clone, Debug)]
pub struct SlicedWindows {
    /// The `d` windows preceding the target, oldest first.
    pub history: Vec<Tensor>,
    pub target: Tensor,
}

/// Number of history windows `d = floor((tau − k) / s)`.
pub fn history_window_count(tau: usize, k: usize, stride: usize) -> usize {
    (tau - k) / stride
}

/// Cuts an `m×tau` instance into `d` history windows plus the final target
/// window, all of length `k`, stepping back from the end by `stride`.
pub fn slice_windows(instance: &Tensor, k: usize, stride: usize) -> Result<SlicedWindows> {
    ensure!(instance.shape().len() == 2, "instance must be a matrix");
    let tau = instance.cols();
    ensure!(stride >= 1, "stride must be at least 1");
    ensure!(k >= 1, "window length must be at least 1");
    ensure!(k <= tau, "window length {k} exceeds the instance span {tau}");
    let d = history_window_count(tau, k, stride);
    let history = (0..d)
        .map(|j| {
            let end = tau - (d - j) * stride;
            instance.columns(end - k, end)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SlicedWindows {
        history,
        target: instance.columns(tau - k, tau)?,
    })
}

/// Pairwise cosine similarity between the rows of an `m×k` window.
///
/// Rows whose norm is below [`ZERO_NORM`] get similarity 0 with every other
/// row and 1 with themselves.
pub fn signature_matrix(window: &Tensor) -> Result<Tensor> {
    ensure!(window.shape().len() == 2, "window must be a matrix");
    let (m, k) = (window.rows(), window.cols());
    let rows: Vec<&[f64]> = window.data().chunks_exact(k).collect();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut s = vec![0.0; m * m];
    for i in 0..m {
        s[i * m + i] = 1.0;
        for j in (i + 1)..m {
            let v = if norms[i] < ZERO_NORM || norms[j] < ZERO_NORM {
                0.0
            } else {
                let dot: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            s[i * m + j] = v;
            s[j * m + i] = v;
        }
    }
    Ok(Tensor::from_parts(vec![m, m], s))
}

/// DFT magnitudes `|ξ_j|`, `j = 1..=k/2`, of each row of an `m×k` window,
/// with `ξ_j = (1/k) Σ_ℓ x_ℓ e^{2πijℓ/k}`. The DC bin is not stored.
pub fn frequency_matrix(window: &Tensor) -> Result<Tensor> {
    ensure!(window.shape().len() == 2, "window must be a matrix");
    let (m, k) = (window.rows(), window.cols());
    ensure!(k % 2 == 0, "frequency matrix needs an even window length, got {k}");
    let half = k / 2;
    // e^{2πi·r/k} for r in 0..k; index j·ℓ mod k picks the twiddle.
    let twiddles: Vec<(f64, f64)> = (0..k)
        .map(|r| {
            let angle = 2.0 * PI * r as f64 / k as f64;
            (angle.cos(), angle.sin())
        })
        .collect();
    let mut out = Vec::with_capacity(m * half);
    for row in window.data().chunks_exact(k) {
        for j in 1..=half {
            let (mut re, mut im) = (0.0, 0.0);
            for (l, &x) in row.iter().enumerate() {
                let (c, s) = twiddles[(j * l) % k];
                re += x * c;
                im += x * s;
            }
            out.push((re * re + im * im).sqrt() / k as f64);
        }
    }
    Ok(Tensor::from_parts(vec![m, half], out))
}

/// The forecast target `Y_t = [S_t | F_t | W_t]`, an `m×(m + k/2 + k)`
/// matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastTarget {
    y: Tensor,
    m: usize,
    k: usize,
}

impl ForecastTarget {
    pub fn build(window: &Tensor) -> Result<Self> {
        let s = signature_matrix(window)?;
        let f = frequency_matrix(window)?;
        let (m, k) = (window.rows(), window.cols());
        let n = target_columns(m, k);
        let mut y = Vec::with_capacity(m * n);
        for i in 0..m {
            y.extend_from_slice(&s.data()[i * m..(i + 1) * m]);
            y.extend_from_slice(&f.data()[i * (k / 2)..(i + 1) * (k / 2)]);
            y.extend_from_slice(&window.data()[i * k..(i + 1) * k]);
        }
        Ok(ForecastTarget {
            y: Tensor::from_parts(vec![m, n], y),
            m,
            k,
        })
    }

    /// Wraps an already assembled `m×(m + k/2 + k)` matrix.
    pub fn from_matrix(y: Tensor, k: usize) -> Result<Self> {
        ensure!(y.shape().len() == 2, "target must be a matrix");
        let m = y.rows();
        ensure!(
            k % 2 == 0 && y.cols() == target_columns(m, k),
            "target of shape {:?} does not fit m={m}, k={k}",
            y.shape()
        );
        Ok(ForecastTarget { y, m, k })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.y
    }

    pub fn into_matrix(self) -> Tensor {
        self.y
    }

    pub fn signature(&self) -> Tensor {
        self.y.columns(0, self.m).expect("signature block in range")
    }

    pub fn frequency(&self) -> Tensor {
        self.y
            .columns(self.m, self.m + self.k / 2)
            .expect("frequency block in range")
    }

    pub fn window(&self) -> Tensor {
        self.y
            .columns(self.m + self.k / 2, self.y.cols())
            .expect("window block in range")
    }
}

/// Column count `n = m + k/2 + k` of a forecast target.
pub fn target_columns(m: usize, k: usize) -> usize {
    m + k / 2 + k
}

pub fn build_target(window: &Tensor) -> Result<ForecastTarget> {
    ForecastTarget::build(window)
}
