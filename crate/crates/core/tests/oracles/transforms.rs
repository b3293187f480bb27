//! Window transforms against direct definitions.

use std::f64::consts::PI;

use fmuad::transforms::{
    build_target, frequency_matrix, history_window_count, signature_matrix, slice_windows,
};
use fmuad::Tensor;
use rand::Rng;

use super::{random_tensor, rng, Check};

pub const DFT_TOLERANCE: f64 = 1e-9;
pub const SIGNATURE_TOLERANCE: f64 = 1e-12;

/// All `k` DFT magnitudes of a real row, `|ξ_j| = |(1/k) Σ x_l e^{-2πi jl/k}|`.
fn dft_magnitudes(row: &[f64]) -> Vec<f64> {
    let k = row.len();
    (0..k)
        .map(|j| {
            let (mut re, mut im) = (0.0, 0.0);
            for (l, &x) in row.iter().enumerate() {
                let angle = -2.0 * PI * (j * l) as f64 / k as f64;
                re += x * angle.cos();
                im += x * angle.sin();
            }
            re.hypot(im) / k as f64
        })
        .collect()
}

pub fn dft_oracle() -> Result<f64, String> {
    let mut r = rng(200);
    let mut worst: f64 = 0.0;
    for k in [4usize, 8, 16, 30] {
        for _ in 0..50 {
            let m = r.random_range(1..=4);
            let w = random_tensor(&mut r, &[m, k], 3.0);
            let f = frequency_matrix(&w).map_err(|e| e.to_string())?;
            if f.shape() != [m, k / 2] {
                return Err(format!("k={k}: shape {:?}", f.shape()));
            }
            for i in 0..m {
                let full = dft_magnitudes(&w.data()[i * k..(i + 1) * k]);
                for j in 1..=k / 2 {
                    let mirror = (full[j] - full[k - j]).abs();
                    let err = (f.at(i, j - 1) - full[j]).abs().max(mirror);
                    if err > DFT_TOLERANCE {
                        return Err(format!("k={k} row {i} bin {j}: deviation {err:e}"));
                    }
                    worst = worst.max(err);
                }
            }
        }
    }
    Ok(worst)
}

/// A cosine at bin `f` puts magnitude 1/2 there and nothing elsewhere.
pub fn pure_tones() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for k in [8usize, 16, 30] {
        for f in 1..k / 2 {
            let row: Vec<f64> = (0..k)
                .map(|l| (2.0 * PI * (f * l) as f64 / k as f64).cos())
                .collect();
            let spec = frequency_matrix(&Tensor::matrix(1, k, row).unwrap()).unwrap();
            for j in 1..=k / 2 {
                let expected = if j == f { 0.5 } else { 0.0 };
                let err = (spec.at(0, j - 1) - expected).abs();
                if err > DFT_TOLERANCE {
                    return Err(format!("k={k} tone {f} bin {j}: {}", spec.at(0, j - 1)));
                }
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Symmetry, unit diagonal, range, positive row rescaling and a direct
/// cosine oracle on 1000 random windows, some with all-zero rows.
pub fn signature_invariants() -> Result<f64, String> {
    let mut r = rng(201);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let m = r.random_range(1..=6);
        let k = 2 * r.random_range(1..=20);
        let mut data = random_tensor(&mut r, &[m, k], 5.0).data().to_vec();
        let zero_row = (case % 10 == 0).then(|| r.random_range(0..m));
        if let Some(z) = zero_row {
            data[z * k..(z + 1) * k].fill(0.0);
        }
        let w = Tensor::matrix(m, k, data.clone()).unwrap();
        let s = signature_matrix(&w).map_err(|e| e.to_string())?;

        let scales: Vec<f64> = (0..m).map(|_| r.random_range(0.01..100.0)).collect();
        let scaled: Vec<f64> = data
            .chunks(k)
            .zip(&scales)
            .flat_map(|(row, c)| row.iter().map(move |v| v * c))
            .collect();
        let s2 = signature_matrix(&Tensor::matrix(m, k, scaled).unwrap()).unwrap();

        for i in 0..m {
            if s.at(i, i) != 1.0 {
                return Err(format!("case {case}: diagonal {}", s.at(i, i)));
            }
            for j in 0..m {
                let v = s.at(i, j);
                if v != s.at(j, i) || !(-1.0..=1.0).contains(&v) {
                    return Err(format!("case {case}: entry ({i},{j}) = {v}"));
                }
                let expected = if i == j {
                    1.0
                } else if Some(i) == zero_row || Some(j) == zero_row {
                    0.0
                } else {
                    cosine(&data[i * k..(i + 1) * k], &data[j * k..(j + 1) * k])
                };
                let err = (v - expected).abs().max((v - s2.at(i, j)).abs());
                if err > SIGNATURE_TOLERANCE {
                    return Err(format!("case {case}: ({i},{j}) deviates by {err:e}"));
                }
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}

pub fn window_slicing() -> Result<f64, String> {
    let mut r = rng(202);
    for _ in 0..300 {
        let m = r.random_range(1..=3);
        let k = r.random_range(1..=12);
        let tau = k + r.random_range(0..=60);
        let s = r.random_range(1..=10);
        let data: Vec<f64> = (0..m * tau).map(|v| v as f64).collect();
        let inst = Tensor::matrix(m, tau, data).unwrap();
        let cut = slice_windows(&inst, k, s).map_err(|e| e.to_string())?;
        let d = (tau - k) / s;
        if cut.history.len() != d || history_window_count(tau, k, s) != d {
            return Err(format!("tau={tau} k={k} s={s}: {} windows", cut.history.len()));
        }
        let ends = (0..d).map(|j| tau - (d - j) * s).chain([tau]);
        for (w, end) in cut.history.iter().chain([&cut.target]).zip(ends) {
            for i in 0..m {
                for c in 0..k {
                    if w.at(i, c) != inst.at(i, end - k + c) {
                        return Err(format!("tau={tau} k={k} s={s}: window ending {end} misaligned"));
                    }
                }
            }
        }
    }
    Ok(0.0)
}

pub fn target_blocks() -> Result<f64, String> {
    let mut r = rng(203);
    for (m, k) in [(38usize, 30usize), (5, 30), (1, 2), (3, 8)] {
        let w = random_tensor(&mut r, &[m, k], 1.0);
        let y = build_target(&w).map_err(|e| e.to_string())?;
        if y.matrix().shape() != [m, m + k / 2 + k] {
            return Err(format!("m={m} k={k}: shape {:?}", y.matrix().shape()));
        }
        let s = signature_matrix(&w).unwrap();
        let f = frequency_matrix(&w).unwrap();
        for i in 0..m {
            let row = &y.matrix().data()[i * (m + k / 2 + k)..(i + 1) * (m + k / 2 + k)];
            let expected: Vec<f64> = s.data()[i * m..(i + 1) * m]
                .iter()
                .chain(&f.data()[i * (k / 2)..(i + 1) * (k / 2)])
                .chain(&w.data()[i * k..(i + 1) * k])
                .copied()
                .collect();
            if row != expected.as_slice() {
                return Err(format!("m={m} k={k}: row {i} blocks differ"));
            }
        }
    }
    Ok(0.0)
}

pub const CHECKS: [(&str, Check); 5] = [
    ("dft_oracle", dft_oracle),
    ("pure_tones", pure_tones),
    ("signature_invariants", signature_invariants),
    ("window_slicing", window_slicing),
    ("target_blocks", target_blocks),
];
