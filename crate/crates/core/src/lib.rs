//! Proxy-based deep metric learning with informative-sample-aware weighting.
//!
//! The engine trains embeddings against one proxy per class. On top of the
//! Proxy-Anchor objective it tracks a per-class learning state (effective
//! number of seen samples, mean similarity of clean samples held in a memory
//! queue) and turns it into dynamic pair weights: positives inside a
//! class-dependent informative band are emphasized, outliers below the band
//! are filtered from the statistics and damped, and easy negatives are
//! damped as the class matures.
//!
//! Modules:
//! - [`linalg`]: vectors, matrices, cosine similarity and its gradients.
//! - [`losses`]: Proxy-Anchor, normalized softmax and Proxy-ISA with `∂L/∂S`.
//! - [`hardness`]: effective number, `ν`, `σ`, `η` and the pair weights.
//! - [`memory`]: the FIFO of clean embeddings.
//! - [`trainer`]: sampling, model, optimizer, the training loop, checkpoints.
//! - [`data`], [`metrics`]: synthetic data, embedding files, Recall@K, MAP@R.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod hardness;
pub mod linalg;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod parallel;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use config::{CompareConfig, ExperimentConfig, LossKind};
pub use error::{Error, Result};
