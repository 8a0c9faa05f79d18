//! Desk-scale gated connector, contrastive alignment, and self-verifying inference.

pub mod backend;
pub mod curation;
pub mod error;
pub mod eval;
pub mod gatemixer;
pub mod objectives;
pub mod selfverify;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
