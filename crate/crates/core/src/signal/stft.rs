//! Short-time Fourier analysis and overlap-add synthesis.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Waveform;
use crate::error::{Error, Result};
use crate::{HOP, WIN};

/// How frames near the signal edges are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Reflect,
    Zero,
}

/// Frame geometry. Frame `t` is centered on sample `t * hop`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub padding: Padding,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: WIN,
            hop: HOP,
            padding: Padding::Reflect,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for `samples` input samples: `1 + samples / hop`.
    pub fn frames(&self, samples: usize) -> usize {
        1 + samples / self.hop
    }
}

/// Complex spectrogram, `frames × bins`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn power(&self, t: usize) -> Vec<f64> {
        self.frame(t).iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Reusable analysis/synthesis engine for one frame geometry.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            cfg,
            window: hann(cfg.n_fft),
            forward: planner.plan_fft_forward(cfg.n_fft),
            inverse: planner.plan_fft_inverse(cfg.n_fft),
        }
    }

    pub fn config(&self) -> StftConfig {
        self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Windowed spectrum of the frame centered on sample `center`.
    pub fn analyze_at(&self, x: &[f64], center: isize) -> Vec<Complex64> {
        let n = self.cfg.n_fft;
        let start = center - (n / 2) as isize;
        let mut buf: Vec<Complex64> = (0..n)
            .map(|j| {
                let i = start + j as isize;
                let v = if i >= 0 && (i as usize) < x.len() {
                    x[i as usize]
                } else {
                    match self.cfg.padding {
                        Padding::Zero => 0.0,
                        Padding::Reflect if x.is_empty() => 0.0,
                        Padding::Reflect => x[reflect_index(i, x.len())],
                    }
                };
                Complex64::new(v * self.window[j], 0.0)
            })
            .collect();
        self.forward.process(&mut buf);
        buf.truncate(self.cfg.bins());
        buf
    }

    pub fn analyze(&self, x: &[f64]) -> Spectrogram {
        let frames = self.cfg.frames(x.len());
        let bins = self.cfg.bins();
        let mut data = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            data.extend(self.analyze_at(x, (t * self.cfg.hop) as isize));
        }
        Spectrogram { frames, bins, data }
    }

    /// Real frame (already windowed for synthesis) from a half spectrum.
    pub fn synthesize_frame(&self, half: &[Complex64]) -> Vec<f64> {
        let n = self.cfg.n_fft;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..half.len()].copy_from_slice(half);
        for k in 1..n - half.len() + 1 {
            buf[n - k] = half[k].conj();
        }
        // DC and Nyquist must be real for a real signal
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        buf.iter()
            .zip(&self.window)
            .map(|(c, w)| c.re * scale * w)
            .collect()
    }

    /// Weighted overlap-add inverse with frames centered at `t * hop`,
    /// normalized by the summed squared window. Output has `len` samples.
    pub fn inverse(&self, spec: &Spectrogram, len: usize) -> Vec<f64> {
        let centers: Vec<isize> = (0..spec.frames)
            .map(|t| (t * self.cfg.hop) as isize)
            .collect();
        self.overlap_add(spec, &centers, len)
    }

    pub fn overlap_add(&self, spec: &Spectrogram, centers: &[isize], len: usize) -> Vec<f64> {
        let n = self.cfg.n_fft;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        for (t, &center) in centers.iter().enumerate() {
            let frame = self.synthesize_frame(spec.frame(t));
            let start = center - (n / 2) as isize;
            for j in 0..n {
                let i = start + j as isize;
                if i >= 0 && (i as usize) < len {
                    out[i as usize] += frame[j];
                    norm[i as usize] += self.window[j] * self.window[j];
                }
            }
        }
        for (o, w) in out.iter_mut().zip(&norm) {
            if *w > 1e-8 {
                *o /= w;
            } else {
                *o = 0.0;
            }
        }
        out
    }
}

/// Complex spectrogram with the standard geometry (1280-point FFT, hop 320,
/// centered frames, reflection padding): `T × 641`.
pub fn stft(w: &Waveform) -> Result<Spectrogram> {
    if w.samples.is_empty() {
        return Err(Error::Input("empty waveform".into()));
    }
    Ok(Stft::new(StftConfig::default()).analyze(&w.samples))
}
