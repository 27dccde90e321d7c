//! Link-prediction laboratory: a GCN/SAGE link predictor with a batch-norm
//! MLP decoder, fixed-ratio and bias-corrected mini-batching, closed-form
//! analysis of batch-norm collapse on indicator activations, and
//! class-separability metrics (Hits@K, trace ratio, k-means + NMI).

pub mod batching;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod forensics;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
