//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward pass. Nodes are recorded in topological order, so
//! the backward sweep is a single reverse walk over the node list.

use crate::error::{ensure, Result};
use crate::linalg::{col2im_add, gemm, im2col, ConvDims};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy { tensor: Var, scalar: Var },
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dims: ConvDims,
        cols: Vec<f64>,
    },
    Reshape(Var),
    Sum(Var),
    Dot(Var, Var),
    Stack(Vec<Var>),
    Softmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    ConcatCols(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<Tensor> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[var.0].clone(), g.clone()))
    }

    pub fn slice(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0)?.as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf: it receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        ensure!(sa == sb, "{what}: shape mismatch {sa:?} vs {sb:?}");
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push_op(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push_op(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "hadamard")?;
        let value = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push_op(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push_op(value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|x| x + offset);
        self.push_op(value, Op::AddScalar(a), &[a])
    }

    /// Multiplies every element of `tensor` by the single-element `scalar`.
    pub fn scale_by(&mut self, tensor: Var, scalar: Var) -> Result<Var> {
        let s = self.value(scalar).item()?;
        let value = self.value(tensor).map(|x| x * s);
        Ok(self.push_op(value, Op::ScaleBy { tensor, scalar }, &[tensor, scalar]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push_op(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push_op(value, Op::Tanh(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push_op(value, Op::LeakyRelu(a, slope), &[a])
    }

    /// Matrix product of a `p×q` and a `q×r` matrix.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        ensure!(
            sa.len() == 2 && sb.len() == 2,
            "matmul needs matrices, got {sa:?} and {sb:?}"
        );
        ensure!(
            sa[1] == sb[0],
            "matmul inner dimensions disagree: {sa:?} · {sb:?}"
        );
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; p * r];
        gemm(
            p,
            q,
            r,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        Ok(self.push_op(Tensor::from_parts(vec![p, r], out), Op::MatMul(a, b), &[a, b]))
    }

    /// Dilated 2-D convolution with zero padding and unit stride.
    ///
    /// `input` is `C_in×H×W`, `kernel` is `C_out×C_in×kh×kw`, and the
    /// optional `bias` holds one value per output channel. Output position
    /// `p` sums `F(s)·k(t)` over all `s + ℓ·t = p`, i.e. a true (flipped)
    /// convolution, shifted by the padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let dims = ConvDims::resolve(
            self.value(input).shape(),
            self.value(kernel).shape(),
            dilation,
            padding,
        )?;
        if let Some(b) = bias {
            ensure!(
                self.value(b).len() == dims.c_out,
                "conv2d bias needs {} entries, got {}",
                dims.c_out,
                self.value(b).len()
            );
        }
        let cols = im2col(self.value(input).data(), &dims);
        let n = dims.out_len();
        let mut out = vec![0.0; dims.c_out * n];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_exact_mut(n).zip(self.value(b).data()) {
                row.fill(bv);
            }
        }
        gemm(
            dims.c_out,
            dims.patch_len(),
            n,
            self.value(kernel).data(),
            false,
            &cols,
            false,
            &mut out,
            1.0,
        );
        let value = Tensor::from_parts(vec![dims.c_out, dims.oh, dims.ow], out);
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        let op = Op::Conv2d {
            input,
            kernel,
            bias,
            dims,
            cols,
        };
        Ok(self.push_op(value, op, &inputs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push_op(value, Op::Reshape(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push_op(value, Op::Sum(a), &[a])
    }

    /// Inner product of two equally shaped tensors, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "dot")?;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push_op(Tensor::scalar(s), Op::Dot(a, b), &[a, b]))
    }

    /// Squared Frobenius norm.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        self.dot(a, a).expect("a tensor always matches its own shape")
    }

    /// Packs single-element tensors into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        ensure!(!scalars.is_empty(), "stack needs at least one value");
        let mut data = Vec::with_capacity(scalars.len());
        for &s in scalars {
            data.push(self.value(s).item()?);
        }
        let value = Tensor::from_parts(vec![data.len()], data);
        Ok(self.push_op(value, Op::Stack(scalars.to_vec()), scalars))
    }

    /// Softmax over all elements, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = {
            let t = self.value(a);
            let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = t.data().iter().map(|&x| (x - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            Tensor::from_parts(t.shape().to_vec(), exps.iter().map(|e| e / total).collect())
        };
        self.push_op(value, Op::Softmax(a), &[a])
    }

    /// `Σ weights[i] · items[i]` for equally shaped `items`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        ensure!(!items.is_empty(), "weighted_sum needs at least one item");
        ensure!(
            self.value(weights).len() == items.len(),
            "weighted_sum has {} weights for {} items",
            self.value(weights).len(),
            items.len()
        );
        for &it in &items[1..] {
            self.same_shape(items[0], it, "weighted_sum")?;
        }
        let shape = self.value(items[0]).shape().to_vec();
        let mut out = vec![0.0; self.value(items[0]).len()];
        for (&w, &it) in self.value(weights).data().iter().zip(items) {
            for (o, x) in out.iter_mut().zip(self.value(it).data()) {
                *o += w * x;
            }
        }
        let mut inputs = vec![weights];
        inputs.extend_from_slice(items);
        let op = Op::WeightedSum {
            weights,
            items: items.to_vec(),
        };
        Ok(self.push_op(Tensor::from_parts(shape, out), op, &inputs))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat_cols needs at least one matrix");
        let rows = self.value(parts[0]).shape()[0];
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            ensure!(
                s.len() == 2 && s[0] == rows,
                "concat_cols needs matrices with {rows} rows, got {s:?}"
            );
            total += s[1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let value = Tensor::from_parts(vec![rows, total], out);
        Ok(self.push_op(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Backpropagates from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure!(
            self.value(loss).is_scalar(),
            "backward needs a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        self.backward_with_seed(loss, &Tensor::scalar(1.0))
    }

    /// Backpropagates an arbitrary upstream gradient `seed` for `output`.
    pub fn backward_with_seed(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        ensure!(output.0 < self.nodes.len(), "unknown tape value {output:?}");
        ensure!(
            seed.shape() == self.value(output).shape(),
            "seed gradient shape {:?} does not match output {:?}",
            seed.shape(),
            self.value(output).shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.data().to_vec());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        // Every trainable leaf gets a gradient, even when it did not
        // influence the output.
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|s| axpy(s, 1.0, g));
                acc(*b, &|s| axpy(s, 1.0, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| axpy(s, 1.0, g));
                acc(*b, &|s| axpy(s, -1.0, g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &|s| {
                    for ((s, gi), bi) in s.iter_mut().zip(g).zip(vb) {
                        *s += gi * bi;
                    }
                });
                acc(*b, &|s| {
                    for ((s, gi), ai) in s.iter_mut().zip(g).zip(va) {
                        *s += gi * ai;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &|s| axpy(s, *c, g)),
            Op::AddScalar(a) => acc(*a, &|s| axpy(s, 1.0, g)),
            Op::ScaleBy { tensor, scalar } => {
                let sv = val(*scalar)[0];
                acc(*tensor, &|s| axpy(s, sv, g));
                let t = val(*tensor);
                acc(*scalar, &|s| s[0] += g.iter().zip(t).map(|(a, b)| a * b).sum::<f64>());
            }
            Op::Sigmoid(a) => acc(*a, &|s| {
                for ((s, gi), yi) in s.iter_mut().zip(g).zip(y) {
                    *s += gi * yi * (1.0 - yi);
                }
            }),
            Op::Tanh(a) => acc(*a, &|s| {
                for ((s, gi), yi) in s.iter_mut().zip(g).zip(y) {
                    *s += gi * (1.0 - yi * yi);
                }
            }),
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                acc(*a, &|s| {
                    for ((s, gi), xi) in s.iter_mut().zip(g).zip(x) {
                        *s += if *xi > 0.0 { *gi } else { slope * gi };
                    }
                })
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (p, q, r) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (val(*a), val(*b));
                // dA = G·Bᵀ, dB = Aᵀ·G
                acc(*a, &|s| gemm(p, r, q, g, false, vb, true, s, 1.0));
                acc(*b, &|s| gemm(q, p, r, va, true, g, false, s, 1.0));
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                dims,
                cols,
            } => {
                let n = dims.out_len();
                let kp = dims.patch_len();
                acc(*kernel, &|s| gemm(dims.c_out, n, kp, g, false, cols, true, s, 1.0));
                if let Some(b) = bias {
                    acc(*b, &|s| {
                        for (sv, row) in s.iter_mut().zip(g.chunks_exact(n)) {
                            *sv += row.iter().sum::<f64>();
                        }
                    });
                }
                if self.needs(*input) {
                    let mut dcols = vec![0.0; kp * n];
                    gemm(kp, dims.c_out, n, val(*kernel), true, g, false, &mut dcols, 0.0);
                    acc(*input, &|s| col2im_add(&dcols, dims, s));
                }
            }
            Op::Reshape(a) => acc(*a, &|s| axpy(s, 1.0, g)),
            Op::Sum(a) => acc(*a, &|s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Dot(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &|s| axpy(s, g[0], vb));
                acc(*b, &|s| axpy(s, g[0], va));
            }
            Op::Stack(items) => {
                for (i, it) in items.iter().enumerate() {
                    acc(*it, &|s| s[0] += g[i]);
                }
            }
            Op::Softmax(a) => {
                let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                acc(*a, &|s| {
                    for ((s, gi), yi) in s.iter_mut().zip(g).zip(y) {
                        *s += yi * (gi - gy);
                    }
                })
            }
            Op::WeightedSum { weights, items } => {
                let w = val(*weights);
                acc(*weights, &|s| {
                    for (sv, it) in s.iter_mut().zip(items) {
                        *sv += g.iter().zip(val(*it)).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
                for (wi, it) in w.iter().zip(items) {
                    acc(*it, &|s| axpy(s, *wi, g));
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let c = self.nodes[p.0].value.shape()[1];
                    acc(*p, &|s| {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            axpy(&mut s[r * c..(r + 1) * c], 1.0, src);
                        }
                    });
                    offset += c;
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
