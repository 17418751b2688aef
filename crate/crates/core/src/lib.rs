//! Dynamically routed residual networks that learn to skip blocks per input.

pub mod autodiff;
pub mod cost;
pub mod data;
pub mod error;
pub mod network;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision defaults.
pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type ParameterSet = autodiff::ParameterSet<f64>;
pub type SkipNet = network::SkipNet<f64>;

/// Single-precision variants.
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Graph32 = autodiff::Graph<f32>;
pub type ParameterSet32 = autodiff::ParameterSet<f32>;
pub type SkipNet32 = network::SkipNet<f32>;
