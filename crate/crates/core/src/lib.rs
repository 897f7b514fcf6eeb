//! Prior-guided hybrid-sensing underwater image restoration.
//!
//! The network is a three-scale U-shape: quaternion-fused detail restorers
//! in the encoder, an inter-channel attention contextualizer guided by a
//! gray-world colour prior at the bottleneck, and calibrating scale
//! harmonizers in the decoder.

pub mod checkpoint;
pub mod config;
pub mod contextualizer;
pub mod data;
pub mod detail;
mod error;
pub mod eval;
pub mod harmonizer;
pub mod loss;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod prior;
pub mod quaternion;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
pub use hybsens_tensor as tensor;
pub use model::{count_macs, count_params, HybSens, ModelConfig, Switches};
