//! Tape-based reverse-mode differentiation over a closed op set.
//!
//! Every op appends one node, so the tape is topologically ordered by
//! construction and `backward` walks it once in reverse.

use crate::error::{Error, Result};

use super::dense::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    AddRowBias(Var, Var),
    ClampSpan(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    MeanPool(Var),
    SumRows(Var),
    SumCols(Var),
    Diag(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    NormalizeRows(Var),
    Pick(Var, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBias(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Affine(a, _)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanPool(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Diag(a)
            | Op::SliceRows(a, _)
            | Op::NormalizeRows(a)
            | Op::Pick(a, _)
            | Op::ClampSpan(a) => vec![*a],
            Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of op records.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if `v` requires grad.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(a).affine(scale, shift)?;
        Ok(self.push(out, Op::Affine(a, scale)))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = self.value(x).add_row_bias(self.value(bias))?;
        Ok(self.push(out, Op::AddRowBias(x, bias)))
    }

    /// Value of [`Tensor::clamp_span`]; the gradient passes to `x` unchanged
    /// and the bounds receive none.
    pub fn clamp_span(&mut self, x: Var, a: Var, b: Var) -> Result<Var> {
        let out = self.value(x).clamp_span(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::ClampSpan(x)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).sigmoid();
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).exp()?;
        Ok(self.push(out, Op::Exp(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).ln()?;
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        self.push(out, Op::Mean(a))
    }

    /// Column-wise mean of an `n x d` matrix, giving a length-`d` vector.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var> {
        let out = super::dense::mean_pool(self.value(a))?;
        Ok(self.push(out, Op::MeanPool(a)))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_rows()?;
        Ok(self.push(out, Op::SumRows(a)))
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_cols()?;
        Ok(self.push(out, Op::SumCols(a)))
    }

    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).diag()?;
        Ok(self.push(out, Op::Diag(a)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&values)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_rows(start, end)?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).normalize_rows()?;
        Ok(self.push(out, Op::NormalizeRows(a)))
    }

    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let out = self.value(a).pick(index)?;
        Ok(self.push(out, Op::Pick(a, index.to_vec())))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Afterwards every node that requires grad holds `d loss / d node`;
    /// nodes the loss does not depend on hold zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.value(loss).shape().to_vec();
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                let g = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("backward".into()));
                }
                node.value.set_grad(g)?;
            } else {
                node.value.zero_grad();
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;

        // accumulate into an input, skipping inputs that do not need gradients
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |da| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bd[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = ad[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += a_ip * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (val(*a).rows(), val(*a).cols());
                acc(*a, &mut |da| {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |da| {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bd) {
                        *d += gi * bi;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(ad) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Affine(a, scale) => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, gi)| *d += scale * gi));
            }
            Op::AddRowBias(x, b) => {
                let c = val(*x).cols();
                acc(*x, &mut |dx| add_into(dx, g));
                acc(*b, &mut |db| {
                    for row in g.chunks(c) {
                        add_into(db, row);
                    }
                });
            }
            Op::ClampSpan(x) => acc(*x, &mut |dx| add_into(dx, g)),
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(*a, &mut |da| {
                    for ((d, gi), yi) in da.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Exp(a) => {
                let y = out.data();
                acc(*a, &mut |da| {
                    for ((d, gi), yi) in da.iter_mut().zip(g).zip(y) {
                        *d += gi * yi;
                    }
                });
            }
            Op::Log(a) => {
                let x = val(*a).data();
                acc(*a, &mut |da| {
                    for ((d, gi), xi) in da.iter_mut().zip(g).zip(x) {
                        *d += gi / xi;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = val(*a).numel() as f64;
                acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::MeanPool(a) => {
                let (r, c) = (val(*a).rows(), val(*a).cols());
                acc(*a, &mut |da| {
                    for row in da.chunks_mut(c) {
                        row.iter_mut().zip(g).for_each(|(d, gi)| *d += gi / r as f64);
                    }
                });
            }
            Op::SumRows(a) => {
                let c = val(*a).cols();
                acc(*a, &mut |da| da.chunks_mut(c).for_each(|row| add_into(row, g)));
            }
            Op::SumCols(a) => {
                let c = val(*a).cols();
                acc(*a, &mut |da| {
                    for (row, gi) in da.chunks_mut(c).zip(g) {
                        row.iter_mut().for_each(|d| *d += gi);
                    }
                });
            }
            Op::Diag(a) => {
                let c = val(*a).cols();
                acc(*a, &mut |da| {
                    for (i, gi) in g.iter().enumerate() {
                        da[i * c + i] += gi;
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (c1, c2) = (val(*a).cols(), val(*b).cols());
                let c = c1 + c2;
                acc(*a, &mut |da| {
                    for (row, grow) in da.chunks_mut(c1).zip(g.chunks(c)) {
                        add_into(row, &grow[..c1]);
                    }
                });
                acc(*b, &mut |db| {
                    for (row, grow) in db.chunks_mut(c2).zip(g.chunks(c)) {
                        add_into(row, &grow[c1..]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).numel();
                    let slice = &g[offset..offset + n];
                    acc(*p, &mut |dp| add_into(dp, slice));
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let c = val(*a).cols();
                let off = start * c;
                acc(*a, &mut |da| add_into(&mut da[off..off + g.len()], g));
            }
            Op::NormalizeRows(a) => {
                let c = val(*a).cols();
                let x = val(*a).data();
                let y = out.data();
                acc(*a, &mut |da| {
                    for r in 0..da.len() / c {
                        let span = r * c..(r + 1) * c;
                        let norm = super::dense::l2_norm(&x[span.clone()]);
                        let (yr, gr) = (&y[span.clone()], &g[span.clone()]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, yi), gi) in da[span].iter_mut().zip(yr).zip(gr) {
                            *d += (gi - yi * dot) / norm;
                        }
                    }
                });
            }
            Op::Pick(a, index) => {
                let c = val(*a).cols();
                acc(*a, &mut |da| {
                    for (i, (&j, gi)) in index.iter().zip(g).enumerate() {
                        da[i * c + j] += gi;
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
