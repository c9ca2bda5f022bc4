//! Speaker-information perturbation: pitch randomization, formant shifting
//! and random frequency shaping, applied in that order.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::resample::read_at_rate;
use super::stft::{Padding, Spectrogram, Stft, StftConfig};
use super::Waveform;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    /// Formant warp ratio drawn from this interval (lower bound ≥ 1).
    pub formant_shift_ratio_range: (f64, f64),
    /// Pitch ratio drawn from this interval (lower bound ≥ 1).
    pub pitch_shift_ratio_range: (f64, f64),
    /// Invert each drawn ratio with probability 0.5.
    pub flip_direction: bool,
    pub eq_band_count: usize,
    pub eq_gain_db_range: (f64, f64),
    pub eq_q_range: (f64, f64),
    pub eq_freq_range: (f64, f64),
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            formant_shift_ratio_range: (1.0, 1.4),
            pitch_shift_ratio_range: (1.0, 2.0),
            flip_direction: true,
            eq_band_count: 8,
            eq_gain_db_range: (-12.0, 12.0),
            eq_q_range: (0.5, 2.0),
            eq_freq_range: (60.0, 7000.0),
            seed: 0,
        }
    }
}

impl PerturbConfig {
    /// Every stage forced to a no-op.
    pub fn identity() -> Self {
        Self {
            formant_shift_ratio_range: (1.0, 1.0),
            pitch_shift_ratio_range: (1.0, 1.0),
            eq_gain_db_range: (0.0, 0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("formant_shift_ratio_range", self.formant_shift_ratio_range),
            ("pitch_shift_ratio_range", self.pitch_shift_ratio_range),
        ] {
            if lo < 1.0 || hi < lo {
                return Err(Error::Config(format!(
                    "{name} = ({lo}, {hi}) needs 1 <= lo <= hi"
                )));
            }
        }
        if self.eq_band_count == 0 {
            return Err(Error::Config("eq_band_count must be >= 1".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn draw_ratio(rng: &mut ChaCha8Rng, range: (f64, f64), flip: bool) -> f64 {
    let r = draw(rng, range);
    let invert = rng.random_bool(0.5);
    if flip && invert {
        1.0 / r
    } else {
        r
    }
}

fn perturb_engine() -> Stft {
    Stft::new(StftConfig {
        n_fft: 1024,
        hop: 256,
        padding: Padding::Zero,
    })
}

/// Pitch change by `ratio` with duration preserved: read the signal
/// `ratio`× faster, then stretch it back with a phase vocoder.
pub fn shift_pitch(x: &[f64], ratio: f64) -> Vec<f64> {
    let n = x.len();
    let short_len = ((n as f64) / ratio).round().max(1.0) as usize;
    let fast = read_at_rate(x, ratio, short_len);
    time_stretch(&fast, n)
}

/// Phase-vocoder stretch of `x` to `out_len` samples.
pub fn time_stretch(x: &[f64], out_len: usize) -> Vec<f64> {
    let engine = perturb_engine();
    let hop = engine.config().hop;
    let bins = engine.config().bins();
    let frames = 1 + out_len / hop;
    let rate = x.len() as f64 / out_len as f64;
    let mut spec = Spectrogram {
        frames,
        bins,
        data: Vec::with_capacity(frames * bins),
    };
    let mut phase: Vec<f64> = Vec::new();
    let mut prev_pos = 0isize;
    for t in 0..frames {
        let pos = (t as f64 * hop as f64 * rate).round() as isize;
        let here = engine.analyze_at(x, pos);
        if t == 0 {
            phase = here.iter().map(|c| c.arg()).collect();
        } else {
            // phase advance over exactly one synthesis hop, measured at the
            // previous analysis position
            let ahead = engine.analyze_at(x, prev_pos + hop as isize);
            let behind = engine.analyze_at(x, prev_pos);
            for k in 0..bins {
                phase[k] += ahead[k].arg() - behind[k].arg();
            }
        }
        spec.data.extend(
            here.iter()
                .zip(&phase)
                .map(|(c, &p)| Complex64::from_polar(c.norm(), p)),
        );
        prev_pos = pos;
    }
    engine.inverse(&spec, out_len)
}

fn smooth_log_envelope(log_mag: &[f64], half_width: usize) -> Vec<f64> {
    let n = log_mag.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in log_mag.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half_width);
            let hi = (k + half_width + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn interp(values: &[f64], pos: f64) -> f64 {
    if pos <= 0.0 {
        return values[0];
    }
    let last = values.len() - 1;
    if pos >= last as f64 {
        return values[last];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    values[i] + frac * (values[i + 1] - values[i])
}

/// Moves the spectral envelope along frequency by `ratio` while keeping the
/// fine structure and phase.
pub fn shift_formants(x: &[f64], ratio: f64) -> Vec<f64> {
    let engine = perturb_engine();
    let mut spec = engine.analyze(x);
    for t in 0..spec.frames {
        let frame = spec.frame_mut(t);
        let log_mag: Vec<f64> = frame.iter().map(|c| (c.norm() + 1e-9).ln()).collect();
        let env = smooth_log_envelope(&log_mag, 12);
        for (k, c) in frame.iter_mut().enumerate() {
            let warped = interp(&env, k as f64 / ratio);
            *c *= (warped - env[k]).exp();
        }
    }
    engine.inverse(&spec, x.len())
}

/// RBJ peaking filter coefficients, normalized so `a0 = 1`.
fn peaking(center: f64, gain_db: f64, q: f64, sr: f64) -> ([f64; 3], [f64; 2]) {
    let a = 10f64.powf(gain_db / 40.0);
    let w0 = 2.0 * PI * center / sr;
    let alpha = w0.sin() / (2.0 * q);
    let cos = w0.cos();
    let a0 = 1.0 + alpha / a;
    (
        [
            (1.0 + alpha * a) / a0,
            (-2.0 * cos) / a0,
            (1.0 - alpha * a) / a0,
        ],
        [(-2.0 * cos) / a0, (1.0 - alpha / a) / a0],
    )
}

fn biquad(x: &mut [f64], b: [f64; 3], a: [f64; 2]) {
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b[0] * *v + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Information perturbation chain. Deterministic for a given `cfg.seed`;
/// output length equals input length.
pub fn perturb(w: &Waveform, cfg: &PerturbConfig) -> Result<Waveform> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sr = w.sample_rate as f64;
    let pitch_ratio = draw_ratio(&mut rng, cfg.pitch_shift_ratio_range, cfg.flip_direction);
    let formant_ratio = draw_ratio(&mut rng, cfg.formant_shift_ratio_range, cfg.flip_direction);
    if w.samples.is_empty() {
        return Ok(w.clone());
    }
    let mut x = shift_pitch(&w.samples, pitch_ratio);
    x = shift_formants(&x, formant_ratio);
    let (f_lo, f_hi) = cfg.eq_freq_range;
    for _ in 0..cfg.eq_band_count {
        let center = (draw(&mut rng, (f_lo.ln(), f_hi.ln())))
            .exp()
            .min(0.45 * sr);
        let gain = draw(&mut rng, cfg.eq_gain_db_range);
        let q = draw(&mut rng, cfg.eq_q_range);
        let (b, a) = peaking(center, gain, q, sr);
        biquad(&mut x, b, a);
    }
    Ok(Waveform {
        samples: x,
        sample_rate: w.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn voiced(secs: f64) -> Waveform {
        let n = (16_000.0 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| {
                    let t = i as f64 / 16_000.0;
                    (1..12)
                        .map(|h| 0.3 / h as f64 * (2.0 * PI * 150.0 * h as f64 * t).sin())
                        .sum()
                })
                .collect(),
        )
    }

    pub(crate) fn dominant_hz(x: &[f64]) -> f64 {
        let n = x.len();
        let engine = Stft::new(StftConfig {
            n_fft: 8192,
            hop: 4096,
            padding: Padding::Zero,
        });
        let mut total = vec![0.0; 4097];
        let mut c = 4096;
        while c + 4096 <= n {
            for (t, v) in total.iter_mut().zip(engine.analyze_at(x, c as isize)) {
                *t += v.norm_sqr();
            }
            c += 2048;
        }
        let k = (1..4096)
            .max_by(|&a, &b| total[a].total_cmp(&total[b]))
            .unwrap();
        k as f64 * 16_000.0 / 8192.0
    }

    #[test]
    fn identity_config_is_a_no_op() {
        let w = voiced(1.0);
        let out = perturb(&w, &PerturbConfig::identity()).unwrap();
        assert_eq!(out.samples.len(), w.samples.len());
        let err = out
            .samples
            .iter()
            .zip(&w.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn same_seed_same_bits() {
        let w = voiced(0.5);
        let cfg = PerturbConfig {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(perturb(&w, &cfg).unwrap(), perturb(&w, &cfg).unwrap());
        let other = PerturbConfig { seed: 12, ..cfg };
        assert_ne!(
            perturb(&w, &other).unwrap(),
            perturb(
                &w,
                &PerturbConfig {
                    seed: 11,
                    ..other.clone()
                }
            )
            .unwrap()
        );
    }

    #[test]
    fn pitch_ratio_moves_sine() {
        let x: Vec<f64> = (0..16_000)
            .map(|i| 0.5 * (2.0 * PI * 200.0 * i as f64 / 16_000.0).sin())
            .collect();
        let y = shift_pitch(&x, 1.5);
        assert_eq!(y.len(), x.len());
        let f = dominant_hz(&y);
        assert!((f - 300.0).abs() < 5.0, "{f}");

        let cfg = PerturbConfig {
            pitch_shift_ratio_range: (1.5, 1.5),
            flip_direction: false,
            eq_gain_db_range: (0.0, 0.0),
            formant_shift_ratio_range: (1.0, 1.0),
            ..Default::default()
        };
        let out = perturb(&Waveform::new(x), &cfg).unwrap();
        assert!((dominant_hz(&out.samples) - 300.0).abs() < 5.0);
    }

    #[test]
    fn bad_ranges_rejected() {
        let cfg = PerturbConfig {
            pitch_shift_ratio_range: (0.5, 2.0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_gain_peaking_is_identity() {
        let (b, a) = peaking(1000.0, 0.0, 1.0, 16_000.0);
        let mut x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let orig = x.clone();
        biquad(&mut x, b, a);
        for (p, q) in x.iter().zip(&orig) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
