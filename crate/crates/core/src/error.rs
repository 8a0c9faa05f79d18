use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{0}: vector has zero norm")]
    DegenerateVector(&'static str),

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("similarity entry S[{row}][{col}] = {value} is not positive; use exp-cosine mode")]
    InvalidSimilarity { row: usize, col: usize, value: f64 },

    #[error("target token {id} at position {pos} is out of range for vocabulary of {vocab}")]
    TokenOutOfRange { pos: usize, id: usize, vocab: usize },

    #[error("log-probability {value} at position {pos} is positive")]
    InvalidLogprob { pos: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("gradient check failed: max relative error {max_rel_err:e} exceeds {tolerance:e}")]
    GradCheck { max_rel_err: f64, tolerance: f64 },

    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("backend capability missing: {0}")]
    Capability(String),

    #[error("{mode} branch failed: {source}")]
    Branch {
        mode: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("could not parse a score from reply: {raw:?}")]
    ScoreParse { raw: String },

    #[error("record {id}: {message}")]
    PipelineOrder { id: String, message: String },

    #[error("record {id} belongs to held-out split {split:?}")]
    HeldOutSplit { id: String, split: String },

    #[error("benchmark {path} has no valid instances ({rejected} line(s) rejected)")]
    EmptyBenchmark { path: PathBuf, rejected: usize },

    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for failures a caller may reasonably retry.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }

    /// Validation failures as opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Shape { .. }
                | Error::DuplicateId(_)
                | Error::EmptyBenchmark { .. }
                | Error::HeldOutSplit { .. }
                | Error::InvalidTensor(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
