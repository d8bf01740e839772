//! Joint hypergraph structure learning and density-aware hypergraph
//! attention for semi-supervised node classification.
//!
//! The library couples two sub-networks trained end-to-end by a built-in
//! reverse-mode autodiff core:
//!
//! * a multi-view structure learner that derives a weighted hypergraph from
//!   learnable per-view similarity embeddings, and
//! * a density-aware attention network that classifies nodes by
//!   node-hyperedge-node message passing, with attention logits biased
//!   toward locally dense (cluster-center-like) nodes.
//!
//! The `hyperdual` binary drives experiments (`train`, `ablate`, `sweep`)
//! from flat config files and writes CSV metrics.

pub mod attention;
pub mod config;
pub mod data;
pub mod error;
pub mod hypergraph;
pub mod mat;
pub mod pattern;
pub mod rng;
pub mod runner;
pub mod structure;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
