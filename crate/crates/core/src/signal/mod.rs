//! Audio I/O and DSP: spectrogram and mel extraction, pitch and energy,
//! speaker-information perturbation and mel-to-audio inversion.

pub mod griffin_lim;
pub mod io;
pub mod mel;
pub mod perturb;
pub mod pitch;
pub mod resample;
pub mod stft;

pub use griffin_lim::griffin_lim;
pub use mel::{frame_energy, mel_spectrogram};
pub use perturb::{perturb, PerturbConfig};
pub use pitch::{extract_pitch, PitchExtractor, Yin, YinConfig};
pub use stft::stft;

use crate::tensor::Tensor;
use crate::SAMPLE_RATE;

/// Mono audio at 16 kHz.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.is_finite())
    }
}

/// `T × 80` log-mel energies.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Tensor<f64>,
}

impl MelSpectrogram {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }
}

/// Per-frame f0 in Hz, 0 for unvoiced frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PitchTrack {
    pub f0: Vec<f64>,
}
