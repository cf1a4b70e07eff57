//! Cross-modal alignment distillation.
//!
//! A student audio encoder (backbone, mean pooling, dense head and an optional
//! tanh projection head) is trained to match teacher text embeddings, possibly
//! augmented with ten lexicon-derived psychological dimensions, under a
//! cosine-similarity or InfoNCE objective. Embeddings are evaluated with
//! person-level ridge regression and a set of overlap/correlation analyses.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod psych;
pub mod stats;
pub mod synth;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
