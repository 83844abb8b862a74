//! Desk-scale laboratory for long-tailed classification.
//!
//! The crate bundles everything needed to study fine-tuning under class
//! imbalance on synthetic embeddings:
//!
//! - [`data`]: long-tailed count generators along two axes (imbalance ratio
//!   and head-tail ratio), cap-based subsampling, bootstrap resampling and a
//!   Gaussian embedding generator, plus the `LTDS` dataset file format.
//! - [`nn`]: a residual MLP backbone with an L2-normalised prototypical head,
//!   hand-written backpropagation, AdamW and a warmup + cosine schedule, plus
//!   the `LTWT` checkpoint format.
//! - [`losses`]: cross-entropy, logit-adjusted cross-entropy and
//!   class-balanced sampling weights.
//! - [`merge`]: uniform and recursive weight averaging, EMA tracking.
//! - [`pipeline`]: training jobs, the two-stage soup (progressive subsampling
//!   plus classifier retraining) and the baselines it is compared against.
//! - [`eval`]: balanced and per-group accuracy, ECE, Brier, NLL and
//!   temperature fitting.
//! - [`cli`]: configuration parsing, grid experiments and report emission
//!   backing the `ltsoups` binary.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod merge;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
