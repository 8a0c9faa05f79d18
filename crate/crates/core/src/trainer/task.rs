//! Synthetic paired data with frozen random stand-ins for the encoders and
//! the language model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gatemixer::{ConnectorConfig, EncoderFeatures};
use crate::tensor::{rng, Tensor};

/// Dimension of the latent shared by an image and its caption.
pub const LATENT_DIM: usize = 4;
/// Vocabulary size of the frozen readout.
pub const VOCAB: usize = 16;

/// Frozen maps. None of these ever receives an update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub cfg: ConnectorConfig,
    /// Per-token gains of the two encoder streams, length `n_tokens`.
    pub gain_v: Tensor,
    pub gain_c: Tensor,
    /// `k x d_v` and `k x d_c` latent-to-feature maps.
    pub p_v: Tensor,
    pub p_c: Tensor,
    /// `k x d_llm` latent-to-text map.
    pub b_txt: Tensor,
    /// `d_llm x d_llm` pooling stand-in for the language model.
    pub m: Tensor,
    /// `d_llm x VOCAB` readout.
    pub r: Tensor,
}

impl SyntheticTask {
    pub fn new(cfg: &ConnectorConfig, seed: u64, stream: u64) -> Result<Self> {
        cfg.validate()?;
        let mut g = rng::seeded(seed, stream);
        let k = LATENT_DIM;
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let gain = |g: &mut rng::SeededRng| {
            rng::uniform(g, &[cfg.n_tokens], 0.5)
                .affine(1.0, 1.0)
                .expect("finite gains")
        };
        let gain_v = gain(&mut g);
        let gain_c = gain(&mut g);
        Ok(SyntheticTask {
            cfg: *cfg,
            gain_v,
            gain_c,
            p_v: rng::normal(&mut g, &[k, cfg.d_v], inv(k)),
            p_c: rng::normal(&mut g, &[k, cfg.d_c], inv(k)),
            b_txt: rng::normal(&mut g, &[k, cfg.d_llm], inv(k)),
            m: rng::normal(&mut g, &[cfg.d_llm, cfg.d_llm], inv(cfg.d_llm)),
            r: rng::normal(&mut g, &[cfg.d_llm, VOCAB], inv(cfg.d_llm)),
        })
    }

    /// Named frozen tensors, for bitwise freeze checks.
    pub fn frozen_tensors(&self) -> [(&'static str, &Tensor); 7] {
        [
            ("gain_v", &self.gain_v),
            ("gain_c", &self.gain_c),
            ("p_v", &self.p_v),
            ("p_c", &self.p_c),
            ("b_txt", &self.b_txt),
            ("m", &self.m),
            ("r", &self.r),
        ]
    }

    /// `b` items from latents `z ~ N(0, I)`. Token `t` of stream `s` is
    /// `gain_s[t] * z P_s`; the text representation is `z B`; the target
    /// token is the readout argmax of the text representation.
    pub fn batch(&self, seed: u64, stream: u64, b: usize) -> Result<SyntheticBatch> {
        if b == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        let mut g = rng::seeded(seed, stream);
        let latents = rng::normal(&mut g, &[b, LATENT_DIM], 1.0);
        let feat_v = latents.matmul(&self.p_v)?;
        let feat_c = latents.matmul(&self.p_c)?;
        let txt_reps = latents.matmul(&self.b_txt)?;
        let logits = txt_reps.matmul(&self.r)?;
        let mut feats = Vec::with_capacity(b);
        let mut target_tokens = Vec::with_capacity(b);
        for i in 0..b {
            feats.push(EncoderFeatures::new(
                outer(&self.gain_v, feat_v.row(i))?,
                outer(&self.gain_c, feat_c.row(i))?,
            )?);
            target_tokens.push(vec![argmax(logits.row(i))]);
        }
        Ok(SyntheticBatch {
            feats,
            target_tokens,
            txt_reps,
            latents,
        })
    }
}

fn outer(gain: &Tensor, row: &[f64]) -> Result<Tensor> {
    let data = gain
        .data()
        .iter()
        .flat_map(|g| row.iter().map(move |x| g * x))
        .collect();
    Tensor::matrix(gain.numel(), row.len(), data)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBatch {
    pub feats: Vec<EncoderFeatures>,
    /// One target token per item.
    pub target_tokens: Vec<Vec<usize>>,
    /// `b x d_llm`
    pub txt_reps: Tensor,
    /// `b x LATENT_DIM`, the shared latents the pairs were generated from.
    pub latents: Tensor,
}

impl SyntheticBatch {
    pub fn len(&self) -> usize {
        self.feats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feats.is_empty()
    }

    pub fn flat_targets(&self) -> Vec<usize> {
        self.target_tokens.iter().flatten().copied().collect()
    }
}

pub fn synth_batch(task: &SyntheticTask, seed: u64, b: usize) -> Result<SyntheticBatch> {
    task.batch(seed, 0, b)
}
