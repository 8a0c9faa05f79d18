//! Alignment-stage losses: token cross-entropy and the symmetric contrastive
//! regularizer over batch-pooled image/text representations.
//!
//! The regularizer divides similarity entries directly, so the default
//! similarity is `exp(cos / tau)`, which is always positive. Raw cosine is
//! available for experiments and is rejected by the loss when any entry is
//! not positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_TAU: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    #[default]
    ExpCosine,
    RawCosine,
}

/// Mean-pooled image and text representations, one row per batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRepresentations {
    pub img: Tensor,
    pub txt: Tensor,
}

impl BatchRepresentations {
    pub fn new(img: Tensor, txt: Tensor) -> Result<Self> {
        if img.rank() != 2 || img.shape() != txt.shape() {
            return Err(Error::shape("batch_representations", img.shape(), txt.shape()));
        }
        Ok(BatchRepresentations { img, txt })
    }

    pub fn batch_size(&self) -> usize {
        self.img.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    /// `b x b`, entry `(i, j)` compares image `i` with text `j`.
    pub s: Tensor,
    pub mode: SimilarityMode,
    pub tau: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("tau must be positive, got {tau}")))
    }
}

pub fn similarity_matrix(
    reps: &BatchRepresentations,
    mode: SimilarityMode,
    tau: f64,
) -> Result<SimilarityMatrix> {
    check_tau(tau)?;
    let img = reps.img.normalize_rows()?;
    let txt = reps.txt.normalize_rows()?;
    let cos = img.matmul(&txt.transpose()?)?;
    let s = match mode {
        SimilarityMode::ExpCosine => cos.affine(1.0 / tau, 0.0)?.exp()?,
        SimilarityMode::RawCosine => cos,
    };
    Ok(SimilarityMatrix { s, mode, tau })
}

/// Symmetric contrastive regularizer:
/// `-(1/2b) * sum_i [ln(S_ii / sum_j S_ji) + ln(S_ii / sum_j S_ij)]`.
pub fn creg_loss(sim: &SimilarityMatrix) -> Result<f64> {
    let s = &sim.s;
    let b = s.rows();
    if s.shape() != [b, b] {
        return Err(Error::shape("creg_loss", s.shape(), &[b, b]));
    }
    check_positive(s)?;
    let col = s.sum_rows()?;
    let row = s.sum_cols()?;
    let mut total = 0.0;
    for i in 0..b {
        let sii = s.at(i, i).ln();
        total += (sii - col.data()[i].ln()) + (sii - row.data()[i].ln());
    }
    Ok(-total / (2.0 * b as f64))
}

fn check_positive(s: &Tensor) -> Result<()> {
    let c = s.cols();
    match s.data().iter().position(|&v| v <= 0.0) {
        Some(pos) => Err(Error::InvalidSimilarity {
            row: pos / c,
            col: pos % c,
            value: s.data()[pos],
        }),
        None => Ok(()),
    }
}

/// Mean negative log-softmax probability of `targets` under `logits` (`T x V`).
pub fn generation_loss(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    if logits.rank() != 2 || logits.rows() != targets.len() {
        return Err(Error::shape("generation_loss", logits.shape(), &[targets.len()]));
    }
    let v = logits.cols();
    let mut total = 0.0;
    for (t, &id) in targets.iter().enumerate() {
        if id >= v {
            return Err(Error::TokenOutOfRange {
                pos: t,
                id,
                vocab: v,
            });
        }
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[id];
    }
    Ok(total / targets.len() as f64)
}

pub fn stage1_objective(gen: f64, creg: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(gen + lambda * creg)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("lambda must be >= 0, got {lambda}")))
    }
}

/// [`similarity_matrix`] + [`creg_loss`] on the tape.
pub fn creg_loss_graph(g: &mut Graph, img: Var, txt: Var, mode: SimilarityMode, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let b = g.value(img).rows();
    let img_n = g.normalize_rows(img)?;
    let txt_n = g.normalize_rows(txt)?;
    let txt_t = g.transpose(txt_n)?;
    let cos = g.matmul(img_n, txt_t)?;
    let s = match mode {
        SimilarityMode::ExpCosine => {
            let scaled = g.scale(cos, 1.0 / tau)?;
            g.exp(scaled)?
        }
        SimilarityMode::RawCosine => {
            check_positive(g.value(cos))?;
            cos
        }
    };
    let diag = g.diag(s)?;
    let col = g.sum_rows(s)?;
    let row = g.sum_cols(s)?;
    let log_diag = g.log(diag)?;
    let log_col = g.log(col)?;
    let log_row = g.log(row)?;
    let twice = g.scale(log_diag, 2.0)?;
    let t = g.sub(twice, log_col)?;
    let t = g.sub(t, log_row)?;
    let total = g.sum(t);
    g.scale(total, -1.0 / (2.0 * b as f64))
}

/// [`generation_loss`] on the tape. The row-max shift is a constant.
pub fn generation_loss_graph(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    let value = g.value(logits);
    if value.rank() != 2 || value.rows() != targets.len() {
        return Err(Error::shape("generation_loss", value.shape(), &[targets.len()]));
    }
    let (rows, cols) = (value.rows(), value.cols());
    let mut shift = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let m = value.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        shift.extend(std::iter::repeat_n(m, cols));
    }
    let shift = g.constant(Tensor::matrix(rows, cols, shift)?);
    let shifted = g.sub(logits, shift)?;
    let e = g.exp(shifted)?;
    let se = g.sum_cols(e)?;
    let lse = g.log(se)?;
    let picked = g.pick(shifted, targets)?;
    let nll = g.sub(lse, picked)?;
    Ok(g.mean(nll))
}

pub fn stage1_objective_graph(g: &mut Graph, gen: Var, creg: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let weighted = g.scale(creg, lambda)?;
    g.add(gen, weighted)
}
