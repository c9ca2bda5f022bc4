//! Frame-level fundamental frequency via YIN.
//!
//! Frames share the mel geometry (one estimate per 320-sample hop). Each
//! frame runs the cumulative-mean-normalized difference function with an
//! absolute threshold, refines the lag by parabolic interpolation, then a
//! 5-point median over voiced neighbours smooths the track. Frames with no
//! lag under the threshold are unvoiced (0 Hz).

use super::{PitchTrack, Waveform};
use crate::error::{Error, Result};
use crate::HOP;

/// Anything that turns a waveform into a frame-aligned f0 track.
pub trait PitchExtractor {
    fn extract(&self, w: &Waveform) -> Result<PitchTrack>;
}

#[derive(Clone, Debug)]
pub struct YinConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub threshold: f64,
    pub median_width: usize,
    /// Frames whose mean square falls below this are unvoiced outright.
    pub silence_power: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self {
            f_min: 65.0,
            f_max: 1000.0,
            threshold: 0.15,
            median_width: 5,
            silence_power: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Yin {
    pub cfg: YinConfig,
}

impl Yin {
    pub fn new(cfg: YinConfig) -> Result<Self> {
        if !(cfg.f_min > 0.0 && cfg.f_min < cfg.f_max) {
            return Err(Error::Config(format!(
                "pitch range f_min {} must be positive and below f_max {}",
                cfg.f_min, cfg.f_max
            )));
        }
        Ok(Self { cfg })
    }

    /// Cumulative-mean-normalized difference for lags `0..=max_lag`.
    pub fn cmndf(frame: &[f64], max_lag: usize) -> Vec<f64> {
        let width = frame.len() - max_lag;
        let mut d = vec![0.0; max_lag + 1];
        for (tau, slot) in d.iter_mut().enumerate().skip(1) {
            let mut acc = 0.0;
            for j in 0..width {
                let diff = frame[j] - frame[j + tau];
                acc += diff * diff;
            }
            *slot = acc;
        }
        let mut out = vec![1.0; max_lag + 1];
        let mut running = 0.0;
        for tau in 1..=max_lag {
            running += d[tau];
            out[tau] = if running > 0.0 {
                d[tau] * tau as f64 / running
            } else {
                1.0
            };
        }
        out
    }

    fn estimate(&self, frame: &[f64], sr: f64, min_lag: usize, max_lag: usize) -> f64 {
        let power = frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64;
        if power < self.cfg.silence_power {
            return 0.0;
        }
        let dn = Self::cmndf(frame, max_lag);
        let mut tau = min_lag.max(2);
        while tau < max_lag {
            if dn[tau] < self.cfg.threshold {
                while tau + 1 < max_lag && dn[tau + 1] < dn[tau] {
                    tau += 1;
                }
                break;
            }
            tau += 1;
        }
        if tau >= max_lag {
            return 0.0;
        }
        let (a, b, c) = (dn[tau - 1], dn[tau], dn[tau + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        let f0 = sr / (tau as f64 + shift);
        if f0 < self.cfg.f_min || f0 > self.cfg.f_max {
            0.0
        } else {
            f0
        }
    }

    fn smooth(&self, raw: &[f64]) -> Vec<f64> {
        let half = self.cfg.median_width / 2;
        (0..raw.len())
            .map(|t| {
                if raw[t] == 0.0 {
                    return 0.0;
                }
                let lo = t.saturating_sub(half);
                let hi = (t + half + 1).min(raw.len());
                let mut voiced: Vec<f64> =
                    raw[lo..hi].iter().copied().filter(|&v| v > 0.0).collect();
                voiced.sort_by(f64::total_cmp);
                voiced[voiced.len() / 2]
            })
            .collect()
    }
}

impl PitchExtractor for Yin {
    fn extract(&self, w: &Waveform) -> Result<PitchTrack> {
        let sr = w.sample_rate as f64;
        let max_lag = (sr / self.cfg.f_min).ceil() as usize + 1;
        let min_lag = (sr / self.cfg.f_max).floor() as usize;
        let len = 2 * max_lag;
        let x = &w.samples;
        let frames = 1 + x.len() / HOP;
        let mut buf = vec![0.0; len];
        let raw: Vec<f64> = (0..frames)
            .map(|t| {
                // analysis window centered on the frame, shifted inward at the edges
                let center = (t * HOP) as isize;
                let start = if x.len() >= len {
                    (center - max_lag as isize).clamp(0, (x.len() - len) as isize) as usize
                } else {
                    0
                };
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = x.get(start + j).copied().unwrap_or(0.0);
                }
                self.estimate(&buf, sr, min_lag, max_lag)
            })
            .collect();
        Ok(PitchTrack {
            f0: self.smooth(&raw),
        })
    }
}

/// YIN with default settings.
pub fn extract_pitch(w: &Waveform) -> Result<PitchTrack> {
    Yin::default().extract(w)
}
