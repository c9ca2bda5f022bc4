//! Batch assembly with padding to the longest item.

use super::Utterance;
use crate::error::Result;
use crate::signal::PitchTrack;
use crate::targets::{build_sd_targets, SpeakerStats};
use crate::tensor::Tensor;

/// One padded batch item. Everything past `n_tokens` / `n_frames` is
/// padding and never reaches a loss.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub id: String,
    pub tokens: Vec<usize>,
    pub n_tokens: usize,
    pub language: usize,
    pub speaker: usize,
    pub n_frames: usize,
    pub mel: Tensor<f32>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    /// Speaker-standardized pitch.
    pub sd_pitch: Vec<f64>,
    pub ssl: Tensor<f32>,
}

impl BatchItem {
    pub fn valid_tokens(&self) -> &[usize] {
        &self.tokens[..self.n_tokens]
    }

    pub fn valid_mel(&self) -> Tensor<f32> {
        self.mel.slice_rows(0, self.n_frames)
    }

    pub fn valid_ssl(&self) -> Tensor<f32> {
        self.ssl.slice_rows(0, self.n_frames)
    }

    pub fn valid_pitch(&self) -> PitchTrack {
        PitchTrack {
            f0: self.pitch[..self.n_frames].to_vec(),
        }
    }

    pub fn valid_energy(&self) -> &[f64] {
        &self.energy[..self.n_frames]
    }

    pub fn valid_sd_pitch(&self) -> &[f64] {
        &self.sd_pitch[..self.n_frames]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
    pub max_frames: usize,
    pub max_tokens: usize,
}

fn pad_rows(t: &Tensor<f32>, rows: usize) -> Tensor<f32> {
    Tensor::from_fn(
        rows,
        t.cols(),
        |r, c| if r < t.rows() { t.get(r, c) } else { 0.0 },
    )
}

fn pad(v: &[f64], len: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(len, 0.0);
    out
}

/// Pads every item to the batch maximum plus `extra_frames` / `extra_tokens`.
pub fn collate(
    utts: &[&Utterance],
    stats: &SpeakerStats,
    extra_frames: usize,
    extra_tokens: usize,
) -> Result<Batch> {
    let max_frames = utts.iter().map(|u| u.frames()).max().unwrap_or(0) + extra_frames;
    let max_tokens = utts.iter().map(|u| u.meta.tokens.len()).max().unwrap_or(0) + extra_tokens;
    let items = utts
        .iter()
        .map(|u| {
            let sd = build_sd_targets(
                &PitchTrack {
                    f0: u.pitch.clone(),
                },
                &u.energy,
                stats.get(u.meta.speaker)?,
            )?;
            let mut tokens = u.meta.tokens.clone();
            tokens.resize(max_tokens, 0);
            Ok(BatchItem {
                id: u.meta.id.clone(),
                tokens,
                n_tokens: u.meta.tokens.len(),
                language: u.meta.language,
                speaker: u.meta.speaker,
                n_frames: u.frames(),
                mel: pad_rows(&u.mel, max_frames),
                pitch: pad(&u.pitch, max_frames),
                energy: pad(&u.energy, max_frames),
                sd_pitch: pad(&sd.pitch, max_frames),
                ssl: pad_rows(&u.ssl, max_frames),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch {
        items,
        max_frames,
        max_tokens,
    })
}
