//! Contradiction retrieval over dual embedding spaces.
//!
//! Documents carry a cosine-space embedding used for candidate recall and a
//! sparse-space embedding whose pairwise differences are scored for
//! sparsity. The combined score is `cosine + alpha * sparsity`.

pub mod bench;
pub mod cleaner;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod evalkit;
pub mod trainer;
pub mod vecmath;

pub use error::{Error, Result};
