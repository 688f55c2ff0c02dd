//! PDFTime: a prototype-guided multivariate time-series classifier.
//!
//! The pipeline embeds fixed-length series with a frequency-weighted
//! inception stack, encodes them with a small pre-norm Transformer, and
//! classifies by log-sum-exp aggregated cosine similarity against a
//! hierarchical bank of hypersphere prototypes. Prototypes are never touched
//! by the optimizer; they move only through momentum-scheduled EMA updates of
//! batch statistics.

pub mod data;
pub mod error;
pub mod prototype;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
