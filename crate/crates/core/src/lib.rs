//! Occlusion-aware 3D occupancy prediction for navigation.

pub mod error;
pub mod manifest;
pub mod navmap;
pub mod navsim;
pub mod num;
pub mod occlusion;
pub mod predictor;
pub mod rng;
pub mod scenegen;
pub mod tensornn;
pub mod voxel;

pub use error::{Error, Result};
pub use num::Real;

pub type Grid32 = voxel::OccupancyGrid<f32>;
pub type Grid64 = voxel::OccupancyGrid<f64>;
pub type Tensor32 = tensornn::Tensor<f32>;
pub type Tensor64 = tensornn::Tensor<f64>;
pub type OpNet32 = predictor::OpNet<f32>;
pub type OpNet64 = predictor::OpNet<f64>;
pub type DoubleLayerMap32 = navmap::DoubleLayerMap<f32>;
pub type DoubleLayerMap64 = navmap::DoubleLayerMap<f64>;
