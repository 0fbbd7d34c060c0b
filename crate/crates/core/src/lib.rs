//! Semantic voxel mapping with recurrent per-cell fusion.
//!
//! The crate bundles everything needed to study how per-cell semantic
//! observations should be fused over long time spans:
//!
//! * [`neural`] — dense kernel (MLP, LSTM, losses, SGD) with exact gradients;
//! * [`perception`] — single-scan understanding: objectness clustering,
//!   point features, object classification;
//! * [`voxmap`] — the sparse voxel map holding occupancy, pooled features,
//!   recurrent state and class probabilities per cell;
//! * [`fusion`] — the three per-cell fusion backends (Bayesian product,
//!   plain LSTM, nap-gated LSTM with a maximum napping duration);
//! * [`sim`] — a deterministic parking-lot scenario generator standing in
//!   for a long-term outdoor dataset;
//! * [`metrics`] — voxel-level confusion accumulation and the three
//!   evaluation metrics;
//! * [`trainer`] — sequence building, mini-batch truncated-BPTT training
//!   and the evaluation protocols (backend comparison, napping sweep).

pub mod error;
pub mod fusion;
pub mod metrics;
pub mod neural;
pub mod perception;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod trainer;
pub mod voxmap;

pub use error::{Error, Result};
