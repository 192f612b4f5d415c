//! Multimodal RGB/IR small-object detection toolkit.
//!
//! Pixel-level fusion of RGB and infrared rasters, a Focus-free CSP
//! backbone, a YOLO detection head, and an auxiliary super-resolution
//! branch that participates in training and is stripped from exported
//! inference models. Everything runs on the CPU in `f64`; the hot kernels
//! are data-parallel (rayon behind the `parallel` feature, sequential
//! fallback otherwise).

pub mod autograd;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod fusion;
pub mod head;
pub mod metrics;
pub mod model;
pub mod sr;
pub mod train;
pub mod nn;
pub mod error;
pub mod gradcheck;
pub mod parallel;
pub mod plot;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
