//! Dilated frequency dynamic convolution (DFD conv) and a small CRNN sound
//! event detection stack built around it.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`kernels`], [`tape`], [`gradcheck`], [`gru`]: dense `f64`
//!   tensors with reverse-mode differentiation.
//! - [`dyn_conv`]: frequency dynamic convolution layers whose basis kernels
//!   may carry different dilations.
//! - [`model`]: the seven-layer CRNN, its loss, Adam and checkpoints.
//! - [`features`]: WAV input, STFT and log-mel features, synthetic clips.
//! - [`data`], [`augment`], [`training`], [`corpus`]: samples, batch
//!   augmentation and the training loop.
//! - [`eval`], [`pipeline`]: event decoding, median filtering, intersection
//!   matching, F1 and a simplified threshold-swept detection score.
//! - [`analysis`]: spread of attention weights across clips.
//! - [`run_config`]: the `section.key = value` run configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dyn_conv;
pub mod analysis;
pub mod augment;
pub mod corpus;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod gru;
pub mod kernels;
pub mod model;
pub mod pipeline;
pub mod run_config;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
