//! Frozen self-supervised feature providers.
//!
//! `File` reads per-utterance matrices produced by an external encoder.
//! `Stub` stands in for the encoder with a seeded random projection of the
//! standardized log-mel (50 frames per second, like a wav2vec2-style model).

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::signal::io::{read_record, write_record};
use crate::signal::{mel_spectrogram, Waveform};
use crate::tensor::Tensor;
use crate::N_MELS;

pub const DEFAULT_SSL_DIM: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub enum SslProvider {
    File { dir: PathBuf },
    Stub { seed: u64, dim: usize },
}

impl SslProvider {
    pub fn stub(seed: u64) -> Self {
        SslProvider::Stub {
            seed,
            dim: DEFAULT_SSL_DIM,
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            SslProvider::File { .. } => "file",
            SslProvider::Stub { .. } => "stub",
        }
    }

    pub fn file_path(dir: &Path, utterance: &str) -> PathBuf {
        dir.join(format!("{utterance}.bin"))
    }

    /// `T′ × D_ssl` features for `w` (already perturbed by the caller).
    pub fn features(&self, w: &Waveform, utterance: &str) -> Result<Tensor<f64>> {
        match self {
            SslProvider::File { dir } => {
                let path = Self::file_path(dir, utterance);
                if !path.exists() {
                    return Err(Error::MissingFeatures {
                        utterance: utterance.to_string(),
                        path,
                    });
                }
                Ok(read_record(&path)?.cast())
            }
            SslProvider::Stub { seed, dim } => {
                let mel = mel_spectrogram(w)?.frames;
                let mean = mel.mean();
                let var = mel
                    .data()
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / mel.len().max(1) as f64;
                let inv = 1.0 / var.sqrt().max(1e-6);
                let normed = mel.map(|v| (v - mean) * inv);
                Ok(normed.matmul(&stub_projection(*seed, *dim)))
            }
        }
    }

    /// Stores features where `File` mode will find them.
    pub fn write_file(dir: &Path, utterance: &str, features: &Tensor<f64>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_record(&Self::file_path(dir, utterance), features)
    }
}

/// `80 × dim` Gaussian projection with variance `1/80`.
pub fn stub_projection(seed: u64, dim: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (N_MELS as f64).sqrt();
    Tensor::from_fn(N_MELS, dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}
