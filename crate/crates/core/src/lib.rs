//! Decoupled cross-lingual speech synthesis.
//!
//! The acoustic model splits generation into a language-dependent generator
//! (speaker-generalized through mixed speaker statistics, binary pitch/energy
//! variance, SSL-derived linguistic targets) and a speaker-dependent generator
//! (speaker-normalized encoder, frame-level pitch/energy). Their projected
//! outputs are summed into an 80-bin log-mel spectrogram.

pub mod align;
pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod signal;
pub mod targets;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};

/// Audio sample rate after ingestion.
pub const SAMPLE_RATE: u32 = 16_000;
/// Mel bins in every spectrogram.
pub const N_MELS: usize = 80;
/// Analysis hop in samples (20 ms).
pub const HOP: usize = 320;
/// Window and FFT length in samples (80 ms).
pub const WIN: usize = 1280;
