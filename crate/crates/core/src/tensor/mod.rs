//! Dense tensors, a reverse-mode tape, and a finite-difference oracle.

mod dense;
mod gradcheck;
mod graph;
pub mod rng;

pub use dense::{cosine_sim, mean_pool, Tensor};
pub use gradcheck::{finite_diff_check, GradCheckReport, SCALE_FLOOR};
pub use graph::{Graph, Var};
