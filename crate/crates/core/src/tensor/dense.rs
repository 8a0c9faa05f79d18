use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` array of rank 1 to 3.
///
/// `grad`, when present, always has the same length as `data`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default)]
    requires_grad: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::InvalidTensor(format!(
                "rank must be 1..=3, got shape {shape:?}"
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!("zero-sized dim in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "element {pos} is not finite ({})",
                data[pos]
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Internal constructor for results of ops whose output shape is already known-good.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(vec![1], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTensor("ragged rows".into()));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count of a matrix; a vector counts as one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[self.shape.len() - 2],
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NonScalarLoss(self.shape.clone()))
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape("set_grad", &self.shape, &[grad.len()]));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Mutable view used by optimizers; callers must keep entries finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let mut t = Tensor::new(shape.to_vec(), self.data.clone())?;
        t.requires_grad = self.requires_grad;
        Ok(t)
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::shape(op, &self.shape, &[0, 0])),
        }
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::from_parts(self.shape.clone(), data).finite(op)
    }

    pub(crate) fn finite(self, op: &str) -> Result<Tensor> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_matrix("matmul")?;
        let (k2, n) = other.require_matrix("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::from_parts(vec![m, n], out).finite("matmul")
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.require_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], out))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    /// Clamps each entry into the closed interval spanned by the matching
    /// entries of `a` and `b`.
    pub fn clamp_span(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let lo = a.zip(b, "clamp_span", f64::min)?;
        let hi = a.zip(b, "clamp_span", f64::max)?;
        self.zip(&lo, "clamp_span", f64::max)?.zip(&hi, "clamp_span", f64::min)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Tensor> {
        self.map(|v| scale * v + shift).finite("affine")
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (r, c) = self.require_matrix("add_row_bias")?;
        if bias.shape != [c] {
            return Err(Error::shape("add_row_bias", &self.shape, &bias.shape));
        }
        let mut out = self.data.clone();
        for i in 0..r {
            for (o, b) in out[i * c..(i + 1) * c].iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Tensor::from_parts(self.shape.clone(), out).finite("add_row_bias")
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid_scalar)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.map(f64::exp).finite("exp")
    }

    pub fn ln(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|&&v| v <= 0.0) {
            return Err(Error::NonFinite(format!("log of non-positive value {v}")));
        }
        Ok(self.map(f64::ln))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Column sums of a matrix, as a vector of length `cols`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (r, c) = self.require_matrix("sum_rows")?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        Ok(Tensor::from_parts(vec![c], out))
    }

    /// Row sums of a matrix, as a vector of length `rows`.
    pub fn sum_cols(&self) -> Result<Tensor> {
        let (r, c) = self.require_matrix("sum_cols")?;
        let out = (0..r).map(|i| self.data[i * c..(i + 1) * c].iter().sum()).collect();
        Ok(Tensor::from_parts(vec![r], out))
    }

    pub fn diag(&self) -> Result<Tensor> {
        let (r, c) = self.require_matrix("diag")?;
        if r != c {
            return Err(Error::shape("diag", &self.shape, &[r, r]));
        }
        Ok(Tensor::from_parts(vec![r], (0..r).map(|i| self.data[i * c + i]).collect()))
    }

    /// Places `[self | other]` side by side.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        let (r, c1) = self.require_matrix("concat_cols")?;
        let (r2, c2) = other.require_matrix("concat_cols")?;
        if r != r2 {
            return Err(Error::shape("concat_cols", &self.shape, &other.shape));
        }
        let mut out = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c1..(i + 1) * c1]);
            out.extend_from_slice(&other.data[i * c2..(i + 1) * c2]);
        }
        Ok(Tensor::from_parts(vec![r, c1 + c2], out))
    }

    /// Stacks tensors vertically; rank-1 inputs count as single rows.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("concat_rows"))?;
        let cols = first.cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            if p.rank() > 2 || p.cols() != cols {
                return Err(Error::shape("concat_rows", &first.shape, &p.shape));
            }
            rows += p.rows();
            out.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_parts(vec![rows, cols], out))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (r, c) = self.require_matrix("slice_rows")?;
        if start >= end || end > r {
            return Err(Error::shape("slice_rows", &self.shape, &[start, end]));
        }
        Ok(Tensor::from_parts(
            vec![end - start, c],
            self.data[start * c..end * c].to_vec(),
        ))
    }

    /// Divides each row by its Euclidean norm.
    pub fn normalize_rows(&self) -> Result<Tensor> {
        let c = self.cols();
        let mut out = self.data.clone();
        for row in out.chunks_mut(c) {
            let norm = l2_norm(row);
            if norm == 0.0 {
                return Err(Error::DegenerateVector("normalize_rows"));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    /// Picks `self[i, index[i]]` for every row.
    pub fn pick(&self, index: &[usize]) -> Result<Tensor> {
        let (r, c) = self.require_matrix("pick")?;
        if index.len() != r {
            return Err(Error::shape("pick", &self.shape, &[index.len()]));
        }
        let mut out = Vec::with_capacity(r);
        for (i, &j) in index.iter().enumerate() {
            if j >= c {
                return Err(Error::TokenOutOfRange {
                    pos: i,
                    id: j,
                    vocab: c,
                });
            }
            out.push(self.data[i * c + j]);
        }
        Ok(Tensor::from_parts(vec![r], out))
    }
}

/// Largest `f64` strictly below one.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, clamped so the result stays strictly inside `(0, 1)`.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    (1.0 / (1.0 + (-x).exp())).clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    // scaled to avoid overflow on large entries
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return 0.0;
    }
    max * v.iter().map(|x| (x / max).powi(2)).sum::<f64>().sqrt()
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_sim", &[u.len()], &[v.len()]));
    }
    if u.is_empty() {
        return Err(Error::Empty("cosine_sim"));
    }
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateVector("cosine_sim"));
    }
    let dot: f64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| (a / nu) * (b / nv))
        .sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Column-wise mean over the rows of an `n x d` matrix.
pub fn mean_pool(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape("mean_pool", x.shape(), &[0, 0]));
    }
    let n = x.rows() as f64;
    x.sum_rows()?.affine(1.0 / n, 0.0)
}
