//! Synthetic tabular data from a tree-conditioned autoregressive transformer.
//!
//! The pipeline fits a gradient-boosted ensemble on a target column and uses
//! each row's leaf indices as a prompt, tokenizes every row with a reversible
//! dual quantizer, trains two small decoder-only transformers on an even split
//! of the rows, and samples new rows under per-position vocabulary
//! constraints. [`eval`] scores the result for fidelity, utility and privacy.

// Validation uses negated comparisons so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod generator;
pub mod loss;
pub mod quantizer;
pub mod sampler;
pub mod transformer;
pub mod tree;
mod util;

pub use error::{Error, Result};
pub use util::mix_seed;
