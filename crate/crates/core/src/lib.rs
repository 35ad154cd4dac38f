//! Spiking neural networks trained with surrogate gradients, with an
//! L2-normalised classification head for angular feature discrimination.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense f64 tensors and a reverse-mode tape.
//! - [`neuron`]: leaky integrate-and-fire dynamics and surrogate gradients.
//! - [`layers`]: residual spiking blocks, heads, dropout.
//! - [`models`]: the visual, audio and fusion networks plus checkpoints.
//! - [`loss`]: spike-count targets, MSE count loss, accuracy, confusion.
//! - [`audio`]: waveform to log-mel spectrogram.
//! - [`discrimination`]: feature banks, cosine distance matrices and the
//!   membrane-accumulation probes.
//! - [`train`]: synthetic data, Adam, schedules and the experiment runner.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod discrimination;
pub mod error;
pub mod io;
pub mod layers;
pub mod loss;
pub mod models;
pub mod neuron;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use neuron::{LifConfig, LifState, ResetMode, SurrogateKind, SurrogateSpec};
pub use tensor::{Tape, Tensor, Var};
