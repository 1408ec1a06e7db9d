//! Time-domain speech separation built on a selective state-space sequence
//! core inside U-Net style blocks, with mask-based source extraction, a
//! permutation-invariant SI-SNR objective, a native reverberant-mixture
//! simulator, and analytic parameter/MAC profiling.
//!
//! Numeric code is generic over the scalar type: `f64` for oracles and
//! verification, `f32` for training and checkpoints.

pub mod cli;
pub mod config;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod mixsim;
pub mod model;
pub mod scalar;
pub mod ssm;
pub mod tensor;
pub mod train;
pub mod util;
pub mod wav;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double precision tensor, the test/oracle mode.
pub type Tensor64 = tensor::Tensor<f64>;
/// Single precision tensor, the training mode.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;

pub use cli::cli_main;
