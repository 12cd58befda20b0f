//! Guided depth super-resolution with a joint implicit image function.
//!
//! Two convolutional encoders turn the LR depth map and the HR RGB guide
//! into latent code grids. For each HR query coordinate an MLP decoder
//! reads the four nearest LR codes, predicts a value and an attention logit
//! per neighbour, and blends the values with softmax weights, optionally on
//! top of a bicubic base.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod coordgrid;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod interpolation;
pub mod jiif_decoder;
pub mod model;
pub mod nn;
pub mod raster;
pub mod run;
pub mod scalar;
pub mod seed;
pub mod training;

pub use error::{JiifError, Result};
pub use scalar::{DType, Scalar};

pub type Raster32 = raster::RasterImage<f32>;
pub type Raster64 = raster::RasterImage<f64>;
pub type JiifModel32 = model::JiifModel<f32>;
pub type JiifModel64 = model::JiifModel<f64>;
pub type Checkpoint32 = training::Checkpoint<f32>;
pub type Checkpoint64 = training::Checkpoint<f64>;
pub type RgbdPair32 = data::RgbdPair<f32>;
pub type RgbdPair64 = data::RgbdPair<f64>;
