//! Dense kernels shared by the tape: GEMM and the im2col lowering used by
//! the convolution operator.

use crate::error::{ensure, Result};

/// `c = op(a) · op(b) + beta · c` for an `m×k` by `k×n` product.
///
/// `a_t` / `b_t` mark operands stored transposed (`a` as `k×m`, `b` as
/// `n×k`). All buffers are dense row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs has wrong length");
    assert_eq!(b.len(), k * n, "gemm: rhs has wrong length");
    assert_eq!(c.len(), m * n, "gemm: output has wrong length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length assertions above guarantee every strided access
    // stays within the three buffers, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Resolved sizes of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub dh: usize,
    pub dw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn resolve(
        input: &[usize],
        kernel: &[usize],
        dilation: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        ensure!(
            input.len() == 3,
            "conv2d input must be C×H×W, got shape {input:?}"
        );
        ensure!(
            kernel.len() == 4,
            "conv2d kernel must be Cout×Cin×kh×kw, got shape {kernel:?}"
        );
        ensure!(
            kernel[1] == input[0],
            "conv2d kernel expects {} input channels, input has {}",
            kernel[1],
            input[0]
        );
        let (dh, dw) = dilation;
        let (ph, pw) = padding;
        ensure!(dh >= 1 && dw >= 1, "conv2d dilation must be >= 1");
        let (kh, kw) = (kernel[2], kernel[3]);
        let ext_h = dh * (kh - 1) + 1;
        let ext_w = dw * (kw - 1) + 1;
        let (h, w) = (input[1], input[2]);
        ensure!(
            h + 2 * ph >= ext_h && w + 2 * pw >= ext_w,
            "dilated kernel extent {ext_h}×{ext_w} exceeds padded input {}×{}",
            h + 2 * ph,
            w + 2 * pw
        );
        Ok(ConvDims {
            c_in: input[0],
            h,
            w,
            c_out: kernel[0],
            kh,
            kw,
            dh,
            dw,
            ph,
            pw,
            oh: h + 2 * ph - ext_h + 1,
            ow: w + 2 * pw - ext_w + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    /// Offsets of tap `(i, j)` relative to an output position. Taps are
    /// flipped so that output `p` sums `F(s)·k(t)` over `s + ℓ·t = p`.
    fn tap_offset(&self, i: usize, j: usize) -> (isize, isize) {
        (
            ((self.kh - 1 - i) * self.dh) as isize - self.ph as isize,
            ((self.kw - 1 - j) * self.dw) as isize - self.pw as isize,
        )
    }
}

/// Lowers the input into a `(c_in·kh·kw) × (oh·ow)` patch matrix.
pub(crate) fn im2col(input: &[f64], d: &ConvDims) -> Vec<f64> {
    let cols = d.out_len();
    let mut out = vec![0.0; d.patch_len() * cols];
    for c in 0..d.c_in {
        let plane = &input[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = (c * d.kh + i) * d.kw + j;
                let dst = &mut out[row * cols..(row + 1) * cols];
                let (oy, ox) = d.tap_offset(i, j);
                for y in 0..d.oh {
                    let iy = y as isize + oy;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let dst_row = &mut dst[y * d.ow..(y + 1) * d.ow];
                    for (x, v) in dst_row.iter_mut().enumerate() {
                        let ix = x as isize + ox;
                        if ix >= 0 && ix < d.w as isize {
                            *v = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im_add(cols_grad: &[f64], d: &ConvDims, input_grad: &mut [f64]) {
    let cols = d.out_len();
    for c in 0..d.c_in {
        let plane = &mut input_grad[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = (c * d.kh + i) * d.kw + j;
                let src = &cols_grad[row * cols..(row + 1) * cols];
                let (oy, ox) = d.tap_offset(i, j);
                for y in 0..d.oh {
                    let iy = y as isize + oy;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for x in 0..d.ow {
                        let ix = x as isize + ox;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[y * d.ow + x];
                        }
                    }
                }
            }
        }
    }
}
