//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and the inputs it
//! read, so node order is a topological order and the backward pass is a
//! single reverse sweep.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, gemm, matrix_dims, same_shape, MatView, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Sum(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SliceCols {
        src: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        src: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    IndexSelect {
        src: Var,
        index: Vec<usize>,
    },
    DepthwiseConv {
        x: Var,
        kernel: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node on a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` did not participate in the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

/// Accumulator slot for an input gradient, created zero-filled on first use.
fn slot(dst: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    dst.get_or_insert_with(|| vec![0.0; len])
}

/// Zero-padded depthwise convolution: `out[i][c] += Σ_o w[o][c] · x[i+o-k][c]`.
pub(crate) fn depthwise_conv_kernel(x: &[f64], n: usize, d: usize, w: &[f64], out: &mut [f64]) {
    let width = w.len() / d;
    let k = (width - 1) / 2;
    for i in 0..n {
        for o in 0..width {
            let j = i as isize + o as isize - k as isize;
            if j < 0 || j >= n as isize {
                continue;
            }
            let j = j as usize;
            let (wr, xr) = (&w[o * d..(o + 1) * d], &x[j * d..(j + 1) * d]);
            let dst = &mut out[i * d..(i + 1) * d];
            for c in 0..d {
                dst[c] += wr[c] * xr[c];
            }
        }
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul_bt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Adds `bias` (length = last axis) to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = ta.last_dim();
        if tb.numel() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(tb.data()).for_each(|(x, b)| *x += b);
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = tensor::gelu(self.value(a));
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, normed, inv_std) = tensor::layer_norm_parts(
            self.value(x),
            self.value(gain),
            self.value(bias),
            tensor::LAYER_NORM_EPS,
        )?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = tensor::softmax_lastdim(self.value(a), mask)?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    /// Mean cross-entropy of `targets` under row-wise softmax of `logits`; scalar output.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (loss, probs) = tensor::cross_entropy_parts(self.value(logits), targets)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs: probs.into_data(),
            },
            &[logits],
        ))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = matrix_dims("slice_cols", self.value(src))?;
        if len == 0 || start + len > c {
            return Err(Error::Shape {
                op: "slice_cols",
                msg: format!("columns {start}..{} out of range for {c}", start + len),
            });
        }
        let t = self.value(src);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        Ok(self.push(out, Op::SliceCols { src, start }, &[src]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.concat_check("concat_cols", parts, |s| s[0])?;
        let total: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = matrix_dims("slice_rows", self.value(src))?;
        if len == 0 || start + len > r {
            return Err(Error::Shape {
                op: "slice_rows",
                msg: format!("rows {start}..{} out of range for {r}", start + len),
            });
        }
        let data = self.value(src).data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(vec![len, c], data)?;
        Ok(self.push(out, Op::SliceRows { src, start }, &[src]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.concat_check("concat_rows", parts, |s| s[1])?;
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rows = data.len() / c;
        let out = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    fn concat_check(&self, op: &'static str, parts: &[Var], key: impl Fn(&[usize]) -> usize) -> Result<usize> {
        let first = parts.first().ok_or(Error::Shape {
            op,
            msg: "nothing to concatenate".into(),
        })?;
        for p in parts {
            matrix_dims(op, self.value(*p))?;
        }
        let want = key(self.shape(*first));
        for p in parts {
            if key(self.shape(*p)) != want {
                return Err(Error::Dimension {
                    op,
                    left: self.shape(*first).to_vec(),
                    right: self.shape(*p).to_vec(),
                });
            }
        }
        Ok(want)
    }

    /// Row lookup: output row `r` is `table[ids[r]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, c) = matrix_dims("gather_rows", self.value(table))?;
        if ids.is_empty() {
            return Err(Error::Shape {
                op: "gather_rows",
                msg: "no rows requested".into(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Input(format!("gather_rows: row {bad} out of range for {rows}")));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![ids.len(), c], data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Element gather on the flattened source: `out.flat[p] = src.flat[index[p]]`.
    pub fn index_select(&mut self, src: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let s = self.value(src).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= s.len()) {
            return Err(Error::Input(format!(
                "index_select: index {bad} out of range for {} elements",
                s.len()
            )));
        }
        let data = index.iter().map(|&i| s[i]).collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::IndexSelect { src, index }, &[src]))
    }

    /// Zero-padded depthwise convolution of `x: [n×d]` with `kernel: [(2k+1)×d]`.
    pub fn depthwise_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (n, d) = matrix_dims("depthwise_conv", self.value(x))?;
        let (width, dk) = matrix_dims("depthwise_conv", self.value(kernel))?;
        if dk != d || width % 2 == 0 {
            return Err(Error::Dimension {
                op: "depthwise_conv",
                left: self.shape(x).to_vec(),
                right: self.shape(kernel).to_vec(),
            });
        }
        let mut out = vec![0.0; n * d];
        depthwise_conv_kernel(self.value(x).data(), n, d, self.value(kernel).data(), &mut out);
        let out = Tensor::new(vec![n, d], out)?;
        Ok(self.push(out, Op::DepthwiseConv { x, kernel }, &[x, kernel]))
    }

    /// Inverted dropout with keep probability `1 - p`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout probability {p} must be < 1")));
        }
        let keep = 1.0 - p;
        let shape = self.shape(a).to_vec();
        let n = self.value(a).numel();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(a, m)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Shape {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", lv.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, p) = (ta.rows(), ta.cols());
                let q = tb.cols();
                let gv = MatView::new(g, m, q);
                if self.wants(*a) {
                    let dst = slot(&mut grads[a.0], m * p);
                    gemm(gv, MatView::new(tb.data(), p, q).t(), 1.0, dst);
                }
                if self.wants(*b) {
                    let dst = slot(&mut grads[b.0], p * q);
                    gemm(MatView::new(ta.data(), m, p).t(), gv, 1.0, dst);
                }
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, p) = (ta.rows(), ta.cols());
                let q = tb.rows();
                let gv = MatView::new(g, m, q);
                if self.wants(*a) {
                    let dst = slot(&mut grads[a.0], m * p);
                    gemm(gv, MatView::new(tb.data(), q, p), 1.0, dst);
                }
                if self.wants(*b) {
                    let dst = slot(&mut grads[b.0], q * p);
                    gemm(gv.t(), MatView::new(ta.data(), m, p), 1.0, dst);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let dst = slot(&mut grads[a.0], r * c);
                for i in 0..r {
                    for j in 0..c {
                        dst[j * r + i] += g[i * c + j];
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        add_into(&mut grads[v.0], g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    let dst = slot(&mut grads[b.0], g.len());
                    dst.iter_mut().zip(g).for_each(|(d, x)| *d -= x);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let dst = slot(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        dst[i] += g[i] * tb.data()[i];
                    }
                }
                if self.wants(*b) {
                    let dst = slot(&mut grads[b.0], g.len());
                    for i in 0..g.len() {
                        dst[i] += g[i] * ta.data()[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                let dst = slot(&mut grads[a.0], g.len());
                dst.iter_mut().zip(g).for_each(|(d, x)| *d += c * x);
            }
            Op::AddBias(a, bias) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*bias) {
                    let n = self.value(*bias).numel();
                    let dst = slot(&mut grads[bias.0], n);
                    for row in g.chunks(n) {
                        dst.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                let dst = slot(&mut grads[a.0], n);
                dst.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let dst = slot(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    dst[i] += g[i] * tensor::gelu_grad_scalar(x[i]);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let n = gv.len();
                if self.wants(*x) {
                    let dst = slot(&mut grads[x.0], g.len());
                    let mut dz = vec![0.0; n];
                    for (r, (gr, zr)) in g.chunks(n).zip(normed.chunks(n)).enumerate() {
                        for j in 0..n {
                            dz[j] = gr[j] * gv[j];
                        }
                        let mean_dz = dz.iter().sum::<f64>() / n as f64;
                        let mean_dz_z = dz.iter().zip(zr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        let out = &mut dst[r * n..(r + 1) * n];
                        for j in 0..n {
                            out[j] += inv_std[r] * (dz[j] - mean_dz - zr[j] * mean_dz_z);
                        }
                    }
                }
                if self.wants(*gain) {
                    let dst = slot(&mut grads[gain.0], n);
                    for (gr, zr) in g.chunks(n).zip(normed.chunks(n)) {
                        for j in 0..n {
                            dst[j] += gr[j] * zr[j];
                        }
                    }
                }
                if self.wants(*bias) {
                    let dst = slot(&mut grads[bias.0], n);
                    for gr in g.chunks(n) {
                        dst.iter_mut().zip(gr).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let dst = slot(&mut grads[a.0], g.len());
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dst.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / targets.len() as f64;
                let dst = slot(&mut grads[logits.0], probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        dst[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            }
            Op::SliceCols { src, start } => {
                let (r, len) = (node.value.rows(), node.value.cols());
                let c = self.value(*src).cols();
                let dst = slot(&mut grads[src.0], r * c);
                for i in 0..r {
                    for j in 0..len {
                        dst[i * c + start + j] += g[i * len + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (node.value.rows(), node.value.cols());
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.wants(*p) {
                        let dst = slot(&mut grads[p.0], r * c);
                        for i in 0..r {
                            for j in 0..c {
                                dst[i * c + j] += g[i * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceRows { src, start } => {
                let c = node.value.cols();
                let n = self.value(*src).numel();
                let dst = slot(&mut grads[src.0], n);
                let base = start * c;
                dst[base..base + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, x)| *d += x);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if self.wants(*p) {
                        add_into(&mut grads[p.0], &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::GatherRows { table, ids } => {
                let t = self.value(*table);
                let c = t.cols();
                let dst = slot(&mut grads[table.0], t.numel());
                for (r, &i) in ids.iter().enumerate() {
                    for j in 0..c {
                        dst[i * c + j] += g[r * c + j];
                    }
                }
            }
            Op::IndexSelect { src, index } => {
                let n = self.value(*src).numel();
                let dst = slot(&mut grads[src.0], n);
                for (p, &i) in index.iter().enumerate() {
                    dst[i] += g[p];
                }
            }
            Op::DepthwiseConv { x, kernel } => {
                let tx = self.value(*x);
                let tw = self.value(*kernel);
                let (n, d) = (tx.rows(), tx.cols());
                let width = tw.rows();
                let k = (width - 1) / 2;
                let want_x = self.wants(*x);
                let want_w = self.wants(*kernel);
                let mut dx = want_x.then(|| vec![0.0; n * d]);
                let mut dw = want_w.then(|| vec![0.0; width * d]);
                for i in 0..n {
                    for o in 0..width {
                        let j = i as isize + o as isize - k as isize;
                        if j < 0 || j >= n as isize {
                            continue;
                        }
                        let j = j as usize;
                        for c in 0..d {
                            let gi = g[i * d + c];
                            if let Some(dx) = dx.as_mut() {
                                dx[j * d + c] += tw.data()[o * d + c] * gi;
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw[o * d + c] += tx.data()[j * d + c] * gi;
                            }
                        }
                    }
                }
                if let Some(dx) = dx {
                    add_into(&mut grads[x.0], &dx);
                }
                if let Some(dw) = dw {
                    add_into(&mut grads[kernel.0], &dw);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn unused_leaf_gets_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let w = tape.leaf(Tensor::vector(vec![5.0]).unwrap());
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[0.0]);
        assert!(g.get(w).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = tape.scale(x, 2.0);
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0]).unwrap());
        let a = tape.scale(x, 2.0);
        let b = tape.add(a, x).unwrap();
        let loss = tape.sum(b);
        assert_eq!(tape.backward(loss).unwrap().wrt(x).data(), &[3.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 1.0]).unwrap());
        let x = tape.leaf(Tensor::vector(vec![2.0, 3.0]).unwrap());
        let y = tape.mul(c, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0]);
    }
}
