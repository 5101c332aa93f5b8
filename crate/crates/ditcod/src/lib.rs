//! Dual-task interactive transformer for camouflaged object detection,
//! built from scratch on CPU: tensor core with reverse-mode autodiff, twin
//! hierarchical encoders, boundary generation by subtraction, cross-attention
//! decoding, training, and the standard segmentation evaluation metrics.

pub mod ablate;
pub mod agg;
pub mod augment;
pub mod backbone;
pub mod boundary;
pub mod canny;
pub mod config;
pub mod dtit;
pub mod dtz;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod nn;
pub mod pnm;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete aliases; the model and trainer run in f64.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tape::Tape<f64>;
