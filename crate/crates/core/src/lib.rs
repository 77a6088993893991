//! Uncertainty-aware mixture of experts (uMoE) for tabular data whose
//! attributes may be given as probability densities instead of scalars.
//!
//! The pipeline, bottom-up:
//! - [`density`]: Gaussian-kernel mixture densities, sampling, top-p filtering, mode search.
//! - [`data`]: CSV loading, standardization, uncertainty injection, chained-equation imputation.
//! - [`partition`]: k-means decomposition and per-instance cluster probability vectors.
//! - [`nn`]: a small feed-forward network with weighted, elastic-net regularized SGD.
//! - [`model`]: the uMoE ensemble and its NN / MoE baselines.
//! - [`harness`]: metrics, folds, nested cross-validation and the sweep protocols.

pub mod data;
pub mod density;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod partition;
pub mod seed;

pub use error::{Error, Result};
