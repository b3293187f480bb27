//! Forward values of the heavy kernels against brute-force loops.

use fmuad::{Tape, Tensor};
use rand::Rng;

use super::{random_tensor, rng, Check};

pub const CONV_TOLERANCE: f64 = 1e-12;

/// Direct evaluation of the flipped, dilated, zero-padded convolution.
pub fn conv_reference(
    x: &Tensor,
    k: &Tensor,
    bias: Option<&Tensor>,
    dil: (usize, usize),
    pad: (usize, usize),
) -> Tensor {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = h + 2 * pad.0 - dil.0 * (kh - 1);
    let ow = w + 2 * pad.1 - dil.1 * (kw - 1);
    let xv = |c: usize, r: isize, s: isize| -> f64 {
        if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
            0.0
        } else {
            x.data()[(c * h + r as usize) * w + s as usize]
        }
    };
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for p in 0..oh {
            for q in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b.data()[o]);
                for c in 0..ci {
                    for a in 0..kh {
                        for b in 0..kw {
                            let r = p as isize - pad.0 as isize + (dil.0 * (kh - 1 - a)) as isize;
                            let s = q as isize - pad.1 as isize + (dil.1 * (kw - 1 - b)) as isize;
                            acc += k.data()[((o * ci + c) * kh + a) * kw + b] * xv(c, r, s);
                        }
                    }
                }
                out[(o * oh + p) * ow + q] = acc;
            }
        }
    }
    Tensor::new(vec![co, oh, ow], out).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random shapes up to 4×8×8 with random kernels, dilations and padding.
pub fn conv_brute_force() -> Result<f64, String> {
    let mut r = rng(100);
    let mut worst: f64 = 0.0;
    for case in 0..300 {
        let ci = r.random_range(1..=4);
        let co = r.random_range(1..=4);
        let h = r.random_range(1..=8);
        let w = r.random_range(1..=8);
        let kh = r.random_range(1..=3);
        let kw = r.random_range(1..=3);
        let dil = (r.random_range(1..=3), r.random_range(1..=3));
        let pad = (r.random_range(0..=3), r.random_range(0..=3));
        if h + 2 * pad.0 < dil.0 * (kh - 1) + 1 || w + 2 * pad.1 < dil.1 * (kw - 1) + 1 {
            continue;
        }
        let x = random_tensor(&mut r, &[ci, h, w], 2.0);
        let k = random_tensor(&mut r, &[co, ci, kh, kw], 1.0);
        let b = random_tensor(&mut r, &[co], 1.0);
        let with_bias = r.random_bool(0.5);
        let expected = conv_reference(&x, &k, with_bias.then_some(&b), dil, pad);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.constant(x), tape.constant(k));
        let bv = with_bias.then(|| tape.constant(b));
        let out = tape.conv2d(xv, kv, bv, dil, pad).map_err(|e| e.to_string())?;
        let got = tape.value(out);
        if got.shape() != expected.shape() {
            return Err(format!("case {case}: shape {:?} vs {:?}", got.shape(), expected.shape()));
        }
        let err = max_abs_diff(got.data(), expected.data());
        if err > CONV_TOLERANCE {
            return Err(format!("case {case}: max deviation {err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn matmul_brute_force() -> Result<f64, String> {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n, k, m) = (r.random_range(1..=9), r.random_range(1..=9), r.random_range(1..=9));
        let a = random_tensor(&mut r, &[n, k], 1.0);
        let b = random_tensor(&mut r, &[k, m], 1.0);
        let mut expected = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                expected[i * m + j] = (0..k).map(|l| a.at(i, l) * b.at(l, j)).sum();
            }
        }
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a), tape.constant(b));
        let out = tape.matmul(av, bv).map_err(|e| e.to_string())?;
        let err = max_abs_diff(tape.value(out).data(), &expected);
        if err > CONV_TOLERANCE {
            return Err(format!("matmul deviates by {err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

pub const CHECKS: [(&str, Check); 2] = [
    ("conv_brute_force", conv_brute_force),
    ("matmul_brute_force", matmul_brute_force),
];
