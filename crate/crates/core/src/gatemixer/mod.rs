//! Two-stream gated connector.
//!
//! Both encoder streams are projected to width `d`, blended per token and per
//! channel by a sigmoid gate over the concatenation `[h_v; h_c]`, prefixed
//! with learnable token rows, and projected into the language embedding
//! space by a bias-free linear map.

mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{rng, Graph, Tensor, Var};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Connector dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConnectorConfig {
    pub n_tokens: usize,
    pub d_v: usize,
    pub d_c: usize,
    pub d: usize,
    pub d_llm: usize,
    pub n_prefix: usize,
}

impl Default for ConnectorConfig {
    /// Desk-scale dims with the reference prefix length of 24.
    fn default() -> Self {
        ConnectorConfig {
            n_tokens: 9,
            d_v: 12,
            d_c: 20,
            d: 8,
            d_llm: 8,
            n_prefix: 24,
        }
    }
}

impl ConnectorConfig {
    /// 729 visual tokens, 1152-wide ViT and 5760-wide CNN features, 4096-wide LLM.
    pub fn reference_scale() -> Self {
        ConnectorConfig {
            n_tokens: 729,
            d_v: 1152,
            d_c: 5760,
            d: 4096,
            d_llm: 4096,
            n_prefix: 24,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_tokens", self.n_tokens),
            ("d_v", self.d_v),
            ("d_c", self.d_c),
            ("d", self.d),
            ("d_llm", self.d_llm),
            ("n_prefix", self.n_prefix),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("connector dim {name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Rows of the projected sequence: prefix rows then visual tokens.
    pub fn output_rows(&self) -> usize {
        self.n_prefix + self.n_tokens
    }

    /// Shapes of the learnable tensors in checkpoint order.
    pub fn param_shapes(&self) -> [(&'static str, Vec<usize>); 6] {
        [
            ("w1_v", vec![self.d_v, self.d]),
            ("w1_c", vec![self.d_c, self.d]),
            ("w_g", vec![self.d, 2 * self.d]),
            ("b_g", vec![self.d]),
            ("h_p", vec![self.n_prefix, self.d]),
            ("w2", vec![self.d, self.d_llm]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Per-token features from the two vision encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderFeatures {
    pub v_v: Tensor,
    pub v_c: Tensor,
}

impl EncoderFeatures {
    pub fn new(v_v: Tensor, v_c: Tensor) -> Result<Self> {
        if v_v.rank() != 2 || v_c.rank() != 2 || v_v.rows() != v_c.rows() {
            return Err(Error::shape("encoder_features", v_v.shape(), v_c.shape()));
        }
        Ok(EncoderFeatures { v_v, v_c })
    }

    pub fn check(&self, cfg: &ConnectorConfig) -> Result<()> {
        if self.v_v.shape() != [cfg.n_tokens, cfg.d_v] {
            return Err(Error::shape("forward", self.v_v.shape(), &[cfg.n_tokens, cfg.d_v]));
        }
        if self.v_c.shape() != [cfg.n_tokens, cfg.d_c] {
            return Err(Error::shape("forward", self.v_c.shape(), &[cfg.n_tokens, cfg.d_c]));
        }
        Ok(())
    }
}

/// Learnable connector parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMixerParams {
    pub cfg: ConnectorConfig,
    /// `d_v x d`
    pub w1_v: Tensor,
    /// `d_c x d`
    pub w1_c: Tensor,
    /// `d x 2d`, applied to each concatenated token row.
    pub w_g: Tensor,
    /// length `d`
    pub b_g: Tensor,
    /// `n_prefix x d`
    pub h_p: Tensor,
    /// `d x d_llm`, no bias.
    pub w2: Tensor,
}

impl GateMixerParams {
    /// Scaled-uniform init with bound `1/sqrt(fan_in)`; the gate bias starts at zero.
    pub fn init(cfg: &ConnectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let draw = |stream: u64, shape: &[usize], fan_in: usize| {
            let mut r = rng::seeded(seed, stream);
            rng::uniform(&mut r, shape, 1.0 / (fan_in as f64).sqrt())
        };
        Ok(GateMixerParams {
            cfg: *cfg,
            w1_v: draw(1, &[cfg.d_v, d], cfg.d_v),
            w1_c: draw(2, &[cfg.d_c, d], cfg.d_c),
            w_g: draw(3, &[d, 2 * d], 2 * d),
            b_g: Tensor::zeros(&[d]),
            h_p: draw(4, &[cfg.n_prefix, d], d),
            w2: draw(5, &[d, cfg.d_llm], d),
        })
    }

    /// Rebuilds params from tensors in checkpoint order.
    pub fn from_tensors(cfg: ConnectorConfig, tensors: Vec<Tensor>) -> Result<Self> {
        cfg.validate()?;
        let [w1_v, w1_c, w_g, b_g, h_p, w2]: [Tensor; 6] = tensors
            .try_into()
            .map_err(|v: Vec<Tensor>| Error::Config(format!("expected 6 tensors, got {}", v.len())))?;
        let p = GateMixerParams {
            cfg,
            w1_v,
            w1_c,
            w_g,
            b_g,
            h_p,
            w2,
        };
        for ((name, want), t) in cfg.param_shapes().iter().zip(p.tensors()) {
            if t.shape() != want.as_slice() {
                return Err(Error::Config(format!(
                    "{name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(p)
    }

    /// Tensors in checkpoint (field) order.
    pub fn tensors(&self) -> [&Tensor; 6] {
        [&self.w1_v, &self.w1_c, &self.w_g, &self.b_g, &self.h_p, &self.w2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w1_v,
            &mut self.w1_c,
            &mut self.w_g,
            &mut self.b_g,
            &mut self.h_p,
            &mut self.w2,
        ]
    }

    pub fn to_vec(&self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }

    /// Puts every parameter on `graph` as a differentiable leaf.
    pub fn register(&self, graph: &mut Graph) -> ParamVars {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| graph.leaf(t.clone().with_requires_grad()))
            .collect();
        ParamVars::from_slice(&vars)
    }
}

/// Graph handles for the six parameter tensors, in checkpoint order.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub w1_v: Var,
    pub w1_c: Var,
    pub w_g: Var,
    pub b_g: Var,
    pub h_p: Var,
    pub w2: Var,
}

impl ParamVars {
    pub fn from_slice(v: &[Var]) -> Self {
        assert_eq!(v.len(), 6, "expected six parameter vars");
        ParamVars {
            w1_v: v[0],
            w1_c: v[1],
            w_g: v[2],
            b_g: v[3],
            h_p: v[4],
            w2: v[5],
        }
    }

    pub fn all(&self) -> [Var; 6] {
        [self.w1_v, self.w1_c, self.w_g, self.b_g, self.h_p, self.w2]
    }
}

/// Every intermediate of one connector pass.
#[derive(Clone, Debug, PartialEq)]
pub struct MixOutput {
    pub h_v: Tensor,
    pub h_c: Tensor,
    pub alpha: Tensor,
    pub h: Tensor,
    /// `(n_prefix + n_tokens) x d_llm`
    pub h_img0: Tensor,
}

/// Gate over `[h_v; h_c]` per token row, then the convex blend.
///
/// Returns `(alpha, h)` with `alpha = sigmoid([h_v; h_c] W_g^T + b_g)` and
/// `h = (1 - alpha) * h_v + alpha * h_c`, clamped entrywise to
/// `[min(h_v, h_c), max(h_v, h_c)]` so rounding never leaves that range.
pub fn gate_mix(h_v: &Tensor, h_c: &Tensor, w_g: &Tensor, b_g: &Tensor) -> Result<(Tensor, Tensor)> {
    if h_v.shape() != h_c.shape() || h_v.rank() != 2 {
        return Err(Error::shape("gate_mix", h_v.shape(), h_c.shape()));
    }
    let d = h_v.cols();
    if w_g.shape() != [d, 2 * d] {
        return Err(Error::shape("gate_mix", w_g.shape(), &[d, 2 * d]));
    }
    let z = h_v
        .concat_cols(h_c)?
        .matmul(&w_g.transpose()?)?
        .add_row_bias(b_g)?;
    let alpha = z.sigmoid();
    let h = alpha
        .affine(-1.0, 1.0)?
        .mul(h_v)?
        .add(&alpha.mul(h_c)?)?
        .clamp_span(h_v, h_c)?;
    Ok((alpha, h))
}

/// Full connector pass without recording gradients.
pub fn forward(feats: &EncoderFeatures, params: &GateMixerParams) -> Result<MixOutput> {
    feats.check(&params.cfg)?;
    let h_v = feats.v_v.matmul(&params.w1_v)?;
    let h_c = feats.v_c.matmul(&params.w1_c)?;
    let (alpha, h) = gate_mix(&h_v, &h_c, &params.w_g, &params.b_g)?;
    let h_img0 = Tensor::concat_rows(&[&params.h_p, &h])?.matmul(&params.w2)?;
    Ok(MixOutput {
        h_v,
        h_c,
        alpha,
        h,
        h_img0,
    })
}

/// Graph handles produced by [`forward_graph`].
#[derive(Clone, Copy, Debug)]
pub struct MixVars {
    pub h_v: Var,
    pub h_c: Var,
    pub alpha: Var,
    pub h: Var,
    pub h_img0: Var,
}

/// Gate on the tape; same arithmetic as [`gate_mix`].
pub fn gate_mix_graph(g: &mut Graph, h_v: Var, h_c: Var, w_g: Var, b_g: Var) -> Result<(Var, Var)> {
    let cat = g.concat_cols(h_v, h_c)?;
    let w_t = g.transpose(w_g)?;
    let z = g.matmul(cat, w_t)?;
    let z = g.add_row_bias(z, b_g)?;
    let alpha = g.sigmoid(z);
    let keep = g.affine(alpha, -1.0, 1.0)?;
    let a = g.mul(keep, h_v)?;
    let b = g.mul(alpha, h_c)?;
    let h = g.add(a, b)?;
    let h = g.clamp_span(h, h_v, h_c)?;
    Ok((alpha, h))
}

/// Connector pass on the tape. `v_v` and `v_c` are typically constants.
pub fn forward_graph(g: &mut Graph, v_v: Var, v_c: Var, p: &ParamVars) -> Result<MixVars> {
    let h_v = g.matmul(v_v, p.w1_v)?;
    let h_c = g.matmul(v_c, p.w1_c)?;
    let (alpha, h) = gate_mix_graph(g, h_v, h_c, p.w_g, p.b_g)?;
    let seq = g.concat_rows(&[p.h_p, h])?;
    let h_img0 = g.matmul(seq, p.w2)?;
    Ok(MixVars {
        h_v,
        h_c,
        alpha,
        h,
        h_img0,
    })
}
