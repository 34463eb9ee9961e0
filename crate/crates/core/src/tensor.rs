//! Dense row-major `f64` tensors and the handful of primitives the encoder
//! needs, each paired with its exact vector-Jacobian product.
//!
//! Every reduction runs in a fixed left-to-right order so repeated calls on
//! identical inputs are bit-identical.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Default LayerNorm variance stabilizer.
pub const LAYERNORM_EPS: f64 = 1e-12;

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    Length { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero or missing extent")]
    EmptyExtent(Vec<usize>),
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("{primitive} takes {expected} inputs, got {got}")]
    Arity {
        primitive: Primitive,
        expected: usize,
        got: usize,
    },
    #[error("function evaluation produced a non-finite value at output {output} (perturbing input {input})")]
    NonFinite { input: usize, output: usize },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::EmptyExtent(shape));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Length {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Panics on an empty extent; shapes built from validated configs only.
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert!(n > 0, "zero-sized tensor shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::Shape {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of rows when viewed as a matrix (a vector is one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_shape(op, self, other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        same_shape("add_assign", self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = dims2("transpose", self)?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::new(vec![n, m], out)
    }

    /// Plain left-to-right sum.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(TensorError::Shape {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        &[m, n] => Ok((m, n)),
        _ => Err(TensorError::Rank {
            op,
            expected: 2,
            shape: t.shape.clone(),
        }),
    }
}

/// `a[m,k] × b[k,n]`. Each output element accumulates over `k` in index order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(TensorError::Shape {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a[m,k] × b[n,k]ᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul_nt", a)?;
    let (n, k2) = dims2("matmul_nt", b)?;
    if k != k2 {
        return Err(TensorError::Shape {
            op: "matmul_nt",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).fold(0.0, |s, (x, y)| s + x * y);
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a[k,m]ᵀ × b[k,n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = dims2("matmul_tn", a)?;
    let (k2, n) = dims2("matmul_tn", b)?;
    if k != k2 {
        return Err(TensorError::Shape {
            op: "matmul_tn",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b.data[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a.data[p * m + i];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Adds a bias vector to every row.
pub fn add_row_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if bias.len() != x.cols() {
        return Err(TensorError::Shape {
            op: "add_row_bias",
            lhs: x.shape.clone(),
            rhs: bias.shape.clone(),
        });
    }
    let mut out = x.clone();
    let c = x.cols();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v += bias.data[i % c];
    }
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_with(b, "add", |x, y| x + y)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn gelu_scalar(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    std_normal_cdf(x) + x * std_normal_pdf(x)
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

/// Normalization statistics for one row: mean and `1/sqrt(var + eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowStats {
    pub mean: f64,
    pub inv_std: f64,
}

pub fn row_stats(row: &[f64], eps: f64) -> RowStats {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    RowStats {
        mean,
        inv_std: 1.0 / (var + eps).sqrt(),
    }
}

/// LayerNorm with population variance over the last axis, applied to every row.
pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let n = x.cols();
    if gamma.len() != n || beta.len() != n {
        return Err(TensorError::Shape {
            op: "layernorm",
            lhs: x.shape.clone(),
            rhs: gamma.shape.clone(),
        });
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let s = row_stats(x.row(r), eps);
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = (*v - s.mean) * s.inv_std * gamma.data[j] + beta.data[j];
        }
    }
    Ok(out)
}

/// Differentiable primitives with a closed-form vector-Jacobian product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// inputs: `[a, b]`
    Matmul,
    /// inputs: `[x]`
    SoftmaxRows,
    /// inputs: `[x]`
    Gelu,
    /// inputs: `[x, gamma, beta]`, normalized over the last axis
    LayerNorm { eps: f64 },
    /// inputs: `[a, b]`
    Add,
}

impl Primitive {
    pub fn arity(self) -> usize {
        match self {
            Primitive::Matmul | Primitive::Add => 2,
            Primitive::SoftmaxRows | Primitive::Gelu => 1,
            Primitive::LayerNorm { .. } => 3,
        }
    }

    pub fn forward(self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.check_arity(inputs.len())?;
        match self {
            Primitive::Matmul => matmul(inputs[0], inputs[1]),
            Primitive::SoftmaxRows => Ok(softmax_rows(inputs[0])),
            Primitive::Gelu => Ok(gelu(inputs[0])),
            Primitive::LayerNorm { eps } => layernorm(inputs[0], inputs[1], inputs[2], eps),
            Primitive::Add => add(inputs[0], inputs[1]),
        }
    }

    fn check_arity(self, got: usize) -> Result<()> {
        if got != self.arity() {
            return Err(TensorError::Arity {
                primitive: self,
                expected: self.arity(),
                got,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Primitive::Matmul => "matmul",
            Primitive::SoftmaxRows => "softmax_rows",
            Primitive::Gelu => "gelu",
            Primitive::LayerNorm { .. } => "layernorm",
            Primitive::Add => "add",
        })
    }
}

impl FromStr for Primitive {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matmul" => Ok(Primitive::Matmul),
            "softmax_rows" => Ok(Primitive::SoftmaxRows),
            "gelu" => Ok(Primitive::Gelu),
            "layernorm" => Ok(Primitive::LayerNorm { eps: LAYERNORM_EPS }),
            "add" => Ok(Primitive::Add),
            other => Err(TensorError::UnknownPrimitive(other.to_string())),
        }
    }
}

/// Vector-Jacobian product of `prim` at `inputs`: one cotangent per input.
pub fn vjp(prim: Primitive, inputs: &[&Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
    prim.check_arity(inputs.len())?;
    match prim {
        Primitive::Matmul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, _) = dims2("matmul vjp", a)?;
            let (_, n) = dims2("matmul vjp", b)?;
            expect_shape("matmul vjp", upstream, &[m, n])?;
            Ok(vec![matmul_nt(upstream, b)?, matmul_tn(a, upstream)?])
        }
        Primitive::SoftmaxRows => {
            let x = inputs[0];
            expect_shape("softmax_rows vjp", upstream, x.shape())?;
            Ok(vec![softmax_rows_vjp(&softmax_rows(x), upstream)])
        }
        Primitive::Gelu => {
            let x = inputs[0];
            expect_shape("gelu vjp", upstream, x.shape())?;
            Ok(vec![x.zip_with(upstream, "gelu vjp", |v, g| gelu_grad_scalar(v) * g)?])
        }
        Primitive::LayerNorm { eps } => {
            let (x, gamma) = (inputs[0], inputs[1]);
            expect_shape("layernorm vjp", upstream, x.shape())?;
            let (dx, dgamma, dbeta) = layernorm_vjp(x, gamma, eps, upstream)?;
            Ok(vec![dx, dgamma, dbeta])
        }
        Primitive::Add => {
            same_shape("add vjp", inputs[0], inputs[1])?;
            expect_shape("add vjp", upstream, inputs[0].shape())?;
            Ok(vec![upstream.clone(), upstream.clone()])
        }
    }
}

/// Looks a primitive up by name and applies [`vjp`].
pub fn vjp_by_name(name: &str, inputs: &[&Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
    vjp(name.parse()?, inputs, upstream)
}

fn expect_shape(op: &'static str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape != shape {
        return Err(TensorError::Shape {
            op,
            lhs: t.shape.clone(),
            rhs: shape.to_vec(),
        });
    }
    Ok(())
}

/// Softmax vjp given the softmax *output* `probs`.
pub fn softmax_rows_vjp(probs: &Tensor, upstream: &Tensor) -> Tensor {
    let mut out = probs.clone();
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = upstream.row(r);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (o, (&pv, &gv)) in out.row_mut(r).iter_mut().zip(p.iter().zip(g)) {
            *o = pv * (gv - dot);
        }
    }
    out
}

/// Returns `(dx, dgamma, dbeta)`; gamma/beta cotangents are summed over rows.
pub fn layernorm_vjp(x: &Tensor, gamma: &Tensor, eps: f64, upstream: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let n = x.cols();
    if gamma.len() != n {
        return Err(TensorError::Shape {
            op: "layernorm vjp",
            lhs: x.shape.clone(),
            rhs: gamma.shape.clone(),
        });
    }
    let nf = n as f64;
    let mut dx = x.clone();
    let mut dgamma = vec![0.0; n];
    let mut dbeta = vec![0.0; n];
    let mut xhat = vec![0.0; n];
    let mut ghat = vec![0.0; n];
    for r in 0..x.rows() {
        let row = x.row(r);
        let s = row_stats(row, eps);
        let up = upstream.row(r);
        for j in 0..n {
            xhat[j] = (row[j] - s.mean) * s.inv_std;
            ghat[j] = up[j] * gamma.data[j];
            dgamma[j] += up[j] * xhat[j];
            dbeta[j] += up[j];
        }
        let mean_g = ghat.iter().sum::<f64>() / nf;
        let mean_gx = ghat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / nf;
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = s.inv_std * (ghat[j] - mean_g - xhat[j] * mean_gx);
        }
    }
    Ok((dx, Tensor::vector(dgamma), Tensor::vector(dbeta)))
}

/// Analytic softmax Jacobian `diag(p) − p pᵀ` from the softmax output `p`.
pub fn softmax_jacobian(p: &[f64]) -> Tensor {
    let n = p.len();
    let mut j = Tensor::zeros(&[n, n]);
    for a in 0..n {
        for b in 0..n {
            let d = if a == b { p[a] } else { 0.0 };
            j.data[a * n + b] = d - p[a] * p[b];
        }
    }
    j
}

/// Analytic Jacobian `∂y_j/∂x_i` of one LayerNorm row (`[n, n]`, output-major).
pub fn layernorm_jacobian(x: &[f64], gamma: &[f64], eps: f64) -> Tensor {
    let n = x.len();
    let nf = n as f64;
    let s = row_stats(x, eps);
    let xhat: Vec<f64> = x.iter().map(|v| (v - s.mean) * s.inv_std).collect();
    let mut j = Tensor::zeros(&[n, n]);
    for a in 0..n {
        for b in 0..n {
            let delta = if a == b { 1.0 } else { 0.0 };
            j.data[a * n + b] = gamma[a] * s.inv_std * (delta - 1.0 / nf - xhat[a] * xhat[b] / nf);
        }
    }
    j
}

/// Central-difference Jacobian of `f` at `x`, shape `[m, n]` with `m = f(x).len()`.
pub fn numeric_jacobian<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(h > 0.0) {
        return Err(TensorError::BadStep(h));
    }
    let n = x.len();
    let mut probe = x.data.clone();
    let m = f(&probe).len();
    let mut jac = vec![0.0; m * n];
    for i in 0..n {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        for (o, (p, q)) in plus.iter().zip(&minus).enumerate() {
            if !p.is_finite() || !q.is_finite() {
                return Err(TensorError::NonFinite { input: i, output: o });
            }
            jac[o * n + i] = (p - q) / (2.0 * h);
        }
    }
    Tensor::new(vec![m, n], jac)
}

/// Reverse-mode carrier: a value with a cotangent accumulator of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    value: Tensor,
    grad: Tensor,
}

impl Dual {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn accumulate(&mut self, cotangent: &Tensor) -> Result<()> {
        self.grad.add_assign(cotangent)
    }

    pub fn into_grad(self) -> Tensor {
        self.grad
    }
}
