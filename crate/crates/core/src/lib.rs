//! Contract-governed sampling for classifier training.
//!
//! Samples are grouped into contracts keyed by attribute values and a rare-class
//! flag. Each contract gets a priority and a target share of exposure. Samplers
//! draw minibatch members so that realised contract coverage tracks those shares,
//! and the coverage, risk and graph modules measure how closely it does.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); aliases below fix
//! the common `f64` instantiations.

pub mod coverage;
pub mod data;
pub mod error;
pub mod graph;
pub mod registry;
pub mod risk;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LossVector = risk::ContractLossVector<f64>;
pub type GraphBoundReport = graph::GraphBoundReport<f64>;
pub type Mlp64 = trainer::Mlp<f64>;
pub type Mlp32 = trainer::Mlp<f32>;
