//! Two-step temporal localization: skim the frames for the query-relevant
//! ones, then peruse outward from each anchor until neighbours stop matching.

pub mod bp;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod segment;
pub mod sl;
pub mod tensor;
pub mod train;

pub use error::{Result, TensorError};
pub use scalar::Scalar;

pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type TrainState32 = train::TrainState<f32>;
pub type TrainState64 = train::TrainState<f64>;
