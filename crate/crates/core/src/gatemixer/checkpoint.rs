//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size | content                                                 |
//! |--------|------|---------------------------------------------------------|
//! | 0      | 8    | magic `b"GMIXCKPT"`                                      |
//! | 8      | 4    | format version (`u32`, currently 1)                      |
//! | 12     | 48   | `n_tokens, d_v, d_c, d, d_llm, n_prefix` as `u64`        |
//! | 60     | ...  | `w1_v, w1_c, w_g, b_g, h_p, w2` as row-major `f64` blocks |
//!
//! Block sizes follow from the header dims; trailing bytes are rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ConnectorConfig, GateMixerParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GMIXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 6 * 8;

impl GateMixerParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.cfg;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * cfg.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [cfg.n_tokens, cfg.d_v, cfg.d_c, cfg.d, cfg.d_llm, cfg.n_prefix] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for t in self.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Checkpoint(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dim = |i: usize| -> Result<usize> {
            let at = 12 + 8 * i;
            let v = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
            usize::try_from(v).map_err(|_| Error::Checkpoint(format!("dim {v} too large")))
        };
        let cfg = ConnectorConfig {
            n_tokens: dim(0)?,
            d_v: dim(1)?,
            d_c: dim(2)?,
            d: dim(3)?,
            d_llm: dim(4)?,
            n_prefix: dim(5)?,
        };
        cfg.validate()?;
        let expected = HEADER_LEN + 8 * cfg.param_count();
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} bytes for {cfg:?}, got {}",
                bytes.len()
            )));
        }
        let mut offset = HEADER_LEN;
        let mut tensors = Vec::with_capacity(6);
        for (_, shape) in cfg.param_shapes() {
            let n: usize = shape.iter().product();
            let data = bytes[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += 8 * n;
            tensors.push(Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        GateMixerParams::from_tensors(cfg, tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        GateMixerParams::from_bytes(&fs::read(path)?)
    }
}
