//! Anchor-guided robust speaker-embedding training at desk scale.
//!
//! The library trains a small frame-level MLP extractor with statistics
//! pooling in two stages: stage 1 learns discriminative speaker embeddings
//! with a (optionally angular-margin) classification loss; stage 2 freezes a
//! copy as an anchor branch and fine-tunes a trainable copy on noisy inputs
//! with an exponential-cosine kernel pulling noisy embeddings toward their
//! clean anchors. A joint-training baseline, an EER evaluator with a
//! brute-force cross-check, embedding-geometry statistics, and a PCA plot
//! exporter round out the pipeline. Everything is seeded and deterministic.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
