//! Jacobian-aligned random forests: a tree-ensemble library that fits a
//! surrogate forest, estimates the expected Jacobian outer product of its
//! prediction surface with finite differences, and retrains a forest on the
//! linearly preconditioned features. Includes the baseline forests, the
//! evaluation metrics, and a reproducible benchmark harness.

pub mod data;
pub mod ejop;
pub mod eval;
pub mod error;
pub mod forest;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod tree;

pub use error::{Error, Result};
