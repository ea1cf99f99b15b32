//! Asymmetric retrieval: a trainable query encoder scored against static article
//! features, with the ablation variants, negative-sampling training and a top-k
//! retrieval evaluation harness.

pub mod cli;
mod codec;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod ndcore;
pub mod rng;
pub mod scalar;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = ndcore::Tensor<f32>;
pub type Tensor64 = ndcore::Tensor<f64>;
pub type Pca32 = features::PcaModel<f32>;
pub type Model32 = models::ModelParams<f32>;
pub type Model64 = models::ModelParams<f64>;
