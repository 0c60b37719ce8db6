//! Reconstruction of perceptual quality scales in JND units from boosted
//! and plain triplet comparisons, with subject screening, bootstrap bands,
//! and statistical comparison of objective quality metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod scale;

pub use error::{Error, Result};
pub mod screening;
pub mod simulate;
