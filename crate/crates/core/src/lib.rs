//! Core library for sparse-key-frame video recognition: dense tensor kernels,
//! flow-guided feature warping, tiny trainable networks, cost accounting, a
//! frame-scheduling inference engine, and the synthetic benchmark harness.

pub mod cost;
pub mod engine;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod nets;
pub mod numcheck;
pub mod ops;
pub mod synth;
pub mod tensor;
pub mod threads;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
