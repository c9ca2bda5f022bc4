//! Mel filterbank, log-mel spectrogram and frame energy.

use super::stft::{Stft, StftConfig};
use super::{MelSpectrogram, Waveform};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::{N_MELS, SAMPLE_RATE, WIN};

/// Floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular, area-normalized filters on a 0–8 kHz mel axis, `n_mels × bins`.
pub fn filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Tensor<f64> {
    let bins = n_fft / 2 + 1;
    let f_max = sample_rate as f64 / 2.0;
    let (m_lo, m_hi) = (hz_to_mel(0.0), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    Tensor::from_fn(n_mels, bins, |m, k| {
        let f = k as f64 * bin_hz;
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let w = if f > lo && f <= mid {
            (f - lo) / (mid - lo)
        } else if f > mid && f < hi {
            (hi - f) / (hi - mid)
        } else {
            0.0
        };
        w * 2.0 / (hi - lo)
    })
}

/// Standard 80-band filterbank for the 1280-point FFT at 16 kHz.
pub fn default_filterbank() -> Tensor<f64> {
    filterbank(N_MELS, WIN, SAMPLE_RATE)
}

/// `log(max(fb · power, ε))` for one power spectrum frame.
pub fn log_mel_frame(fb: &Tensor<f64>, power: &[f64], out: &mut [f64]) {
    for (m, o) in out.iter_mut().enumerate() {
        let e: f64 = fb.row(m).iter().zip(power).map(|(w, p)| w * p).sum();
        *o = e.max(LOG_FLOOR).ln();
    }
}

/// Log-mel spectrogram (`T × 80`) with the standard frame geometry.
pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    let spec = super::stft::stft(w)?;
    let fb = default_filterbank();
    let mut frames = Tensor::zeros(spec.frames, N_MELS);
    for t in 0..spec.frames {
        let p = spec.power(t);
        log_mel_frame(&fb, &p, frames.row_mut(t));
    }
    Ok(MelSpectrogram { frames })
}

/// Same as [`mel_spectrogram`] for a custom geometry; used by the SSL stub
/// and by Griffin–Lim's consistency measure.
pub fn log_mel_with(engine: &Stft, fb: &Tensor<f64>, x: &[f64]) -> Tensor<f64> {
    let spec = engine.analyze(x);
    let mut frames = Tensor::zeros(spec.frames, fb.rows());
    for t in 0..spec.frames {
        log_mel_frame(fb, &spec.power(t), frames.row_mut(t));
    }
    frames
}

pub fn default_engine() -> Stft {
    Stft::new(StftConfig::default())
}

/// Per-frame mean over the 80 mel bins.
pub fn frame_energy(m: &MelSpectrogram) -> Vec<f64> {
    let f = &m.frames;
    (0..f.rows())
        .map(|t| f.row(t).iter().sum::<f64>() / f.cols() as f64)
        .collect()
}
