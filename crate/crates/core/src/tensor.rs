//! Dense row-major `f64` tensors and the eager kernels shared with the tape.

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                op: "tensor",
                msg: format!("dimensions must be positive, got {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                msg: format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; numel]).expect("filled: invalid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape {
                op: "from_rows",
                msg: "ragged rows".into(),
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Dimension {
                op: "set_grad",
                left: self.shape.clone(),
                right: vec![grad.len()],
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Size of the trailing axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    /// Number of rows when viewed as `[numel / last_dim, last_dim]`.
    pub fn outer_len(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    pub fn rows(&self) -> usize {
        self.outer_len()
    }

    pub fn cols(&self) -> usize {
        self.last_dim()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = matrix_dims("transpose", self)?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

pub(crate) fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape {
            op,
            msg: format!("expected a matrix, got shape {s:?}"),
        }),
    }
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Strided view of a row-major matrix, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatView<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `out = a * b + beta * out`, with `out` row-major `[a.rows, b.cols]`.
pub(crate) fn gemm(a: MatView<'_>, b: MatView<'_>, beta: f64, out: &mut [f64]) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.len(), a.rows * b.cols);
    debug_assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    // SAFETY: the views describe in-bounds strided layouts over live slices, and `out`
    // is an exclusive row-major buffer of exactly `a.rows * b.cols` elements.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            out.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Matrix product `[m×p] · [p×q]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, p) = matrix_dims("matmul", a)?;
    let (p2, q) = matrix_dims("matmul", b)?;
    if p != p2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * q];
    gemm(MatView::new(a.data(), m, p), MatView::new(b.data(), p, q), 0.0, &mut out);
    Tensor::new(vec![m, q], out)
}

/// Matrix product with the right operand transposed: `[m×p] · [q×p]ᵀ`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, p) = matrix_dims("matmul_bt", a)?;
    let (q, p2) = matrix_dims("matmul_bt", b)?;
    if p != p2 {
        return Err(Error::Dimension {
            op: "matmul_bt",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * q];
    gemm(
        MatView::new(a.data(), m, p),
        MatView::new(b.data(), q, p).t(),
        0.0,
        &mut out,
    );
    Tensor::new(vec![m, q], out)
}

/// Softmax over the last axis. `mask[i] == false` excludes entry `i`; excluded
/// entries receive exactly zero probability.
pub fn softmax_lastdim(t: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    if let Some(m) = mask {
        if m.len() != t.numel() {
            return Err(Error::Dimension {
                op: "softmax_lastdim",
                left: t.shape().to_vec(),
                right: vec![m.len()],
            });
        }
    }
    let n = t.last_dim();
    let mut out = vec![0.0; t.numel()];
    for (r, (src, dst)) in t.data().chunks(n).zip(out.chunks_mut(n)).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[r * n + j]);
        let max = (0..n)
            .filter(|&j| keep(j))
            .map(|j| src[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::FullyMasked { row: r });
        }
        let mut total = 0.0;
        for j in 0..n {
            if keep(j) {
                let e = (src[j] - max).exp();
                dst[j] = e;
                total += e;
            }
        }
        for v in dst.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let th = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner
}

pub fn gelu(t: &Tensor) -> Tensor {
    t.map(gelu_scalar)
}

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Normalizes the last axis to zero mean and unit variance, then applies `gain` and `bias`.
pub fn layer_norm(t: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    Ok(layer_norm_parts(t, gain, bias, eps)?.0)
}

/// Returns `(output, normalized, inverse std per row)`.
pub(crate) fn layer_norm_parts(
    t: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let n = t.last_dim();
    for p in [gain, bias] {
        if p.numel() != n {
            return Err(Error::Dimension {
                op: "layer_norm",
                left: t.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let mut out = vec![0.0; t.numel()];
    let mut normed = vec![0.0; t.numel()];
    let mut inv_std = Vec::with_capacity(t.outer_len());
    for (row, (o, z)) in t
        .data()
        .chunks(n)
        .zip(out.chunks_mut(n).zip(normed.chunks_mut(n)))
    {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        for j in 0..n {
            z[j] = (row[j] - mean) * is;
            o[j] = z[j] * gain.data()[j] + bias.data()[j];
        }
        inv_std.push(is);
    }
    Ok((Tensor::new(t.shape().to_vec(), out)?, normed, inv_std))
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    Ok(cross_entropy_parts(logits, targets)?.0)
}

/// Returns `(loss, softmax probabilities)`.
pub(crate) fn cross_entropy_parts(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, classes) = matrix_dims("cross_entropy", logits)?;
    if rows != targets.len() {
        return Err(Error::Dimension {
            op: "cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::Input(format!(
            "cross_entropy: target {bad} out of range for {classes} classes"
        )));
    }
    let probs = softmax_lastdim(logits, None)?;
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
    }
    Ok((loss / rows as f64, probs))
}
