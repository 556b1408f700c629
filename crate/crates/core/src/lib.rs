//! Squeezeformer and Conformer speech encoders on a small `f64` autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, primitive ops and reverse-mode autodiff.
//! - [`nn`]: parameter storage and the encoder building blocks.
//! - [`model`]: configuration, named presets, the assembled encoder,
//!   parameter counting, greedy CTC decoding and checkpoints.
//! - [`analysis`]: analytic FLOPs model, ablation ladder and the
//!   temporal-redundancy profiler.
//! - [`train`]: CTC loss, learning-rate schedule, AdamW, SpecAugment,
//!   synthetic tasks and the training loop.
//! - [`io`]: binary feature files.

pub mod analysis;
pub mod error;
pub mod io;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
