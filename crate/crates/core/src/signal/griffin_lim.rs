//! Mel-to-audio inversion: per-frame non-negative least squares back to a
//! linear power spectrum, then Griffin–Lim phase reconstruction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::mel::default_filterbank;
use super::stft::{Padding, Spectrogram, Stft, StftConfig};
use super::{MelSpectrogram, Waveform};
use crate::tensor::Tensor;
use crate::{HOP, SAMPLE_RATE};

pub const DEFAULT_ITERS: usize = 32;

/// Lawson–Hanson active-set NNLS: `min ‖A s − b‖, s ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut s = DVector::zeros(n);
    let mut passive = vec![false; n];
    let atb = a.transpose() * b;
    let tol = 1e-10 * atb.amax().max(1e-300);
    for _ in 0..3 * n {
        let w = &atb - a.transpose() * (a * &s);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let z = solve_subset(a, b, &idx);
            if z.iter().all(|&v| v > 0.0) {
                s.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    s[i] = z[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    alpha = alpha.min(s[i] / (s[i] - z[k]));
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                s[i] += alpha * (z[k] - s[i]);
                if s[i] <= 1e-15 * (1.0 + z[k].abs()) {
                    s[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    s
}

fn solve_subset(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> Vec<f64> {
    let sub = a.select_columns(idx);
    let mut gram = sub.transpose() * &sub;
    let ridge = 1e-12 * gram.diagonal().amax().max(1e-300);
    for i in 0..idx.len() {
        gram[(i, i)] += ridge;
    }
    let rhs = sub.transpose() * b;
    match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs).iter().copied().collect(),
        None => gram
            .lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_else(|| vec![0.0; idx.len()]),
    }
}

/// Linear magnitude spectrogram whose mel projection best matches `mel`.
pub fn mel_to_magnitude(mel: &MelSpectrogram) -> Tensor<f64> {
    let fb = default_filterbank();
    let a = DMatrix::from_row_slice(fb.rows(), fb.cols(), fb.data());
    let frames = mel.frames.rows();
    let mut out = Tensor::zeros(frames, fb.cols());
    for t in 0..frames {
        let target = DVector::from_iterator(fb.rows(), mel.frames.row(t).iter().map(|v| v.exp()));
        let power = nnls(&a, &target);
        for (o, p) in out.row_mut(t).iter_mut().zip(power.iter()) {
            *o = p.max(0.0).sqrt();
        }
    }
    out
}

fn engine() -> Stft {
    Stft::new(StftConfig {
        padding: Padding::Zero,
        ..StftConfig::default()
    })
}

/// Waveform of `(T - 1) · hop` samples whose spectrogram magnitude tracks
/// the mel inversion. The initial phase is drawn from a fixed seed.
pub fn griffin_lim(mel: &MelSpectrogram, iters: usize) -> Waveform {
    let mag = mel_to_magnitude(mel);
    griffin_lim_from_magnitude(&mag, iters.max(1))
}

pub fn griffin_lim_from_magnitude(mag: &Tensor<f64>, iters: usize) -> Waveform {
    let stft = engine();
    let (frames, bins) = mag.shape();
    let len = frames.saturating_sub(1) * HOP;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c);
    let mut spec = Spectrogram {
        frames,
        bins,
        data: mag
            .data()
            .iter()
            .map(|&m| {
                Complex64::from_polar(
                    m,
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                )
            })
            .collect(),
    };
    let mut x = stft.inverse(&spec, len);
    for _ in 1..iters {
        let rebuilt = stft.analyze(&x);
        for (s, (r, &m)) in spec
            .data
            .iter_mut()
            .zip(rebuilt.data.iter().zip(mag.data()))
        {
            let n = r.norm();
            *s = if n > 1e-12 {
                r * (m / n)
            } else {
                Complex64::new(m, 0.0)
            };
        }
        x = stft.inverse(&spec, len);
    }
    Waveform {
        samples: x,
        sample_rate: SAMPLE_RATE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::mel::mel_spectrogram;

    #[test]
    fn nnls_recovers_nonnegative_solution() {
        let a = DMatrix::from_row_slice(
            3,
            4,
            &[1.0, 0.5, 0.0, 0.0, 0.0, 0.5, 1.0, 0.2, 0.0, 0.0, 0.3, 1.0],
        );
        let truth = DVector::from_vec(vec![0.7, 0.0, 0.2, 1.1]);
        let s = nnls(&a, &(&a * &truth));
        assert!((&a * &s - &a * &truth).norm() < 1e-9);
        assert!(s.iter().all(|&v| v >= 0.0));
        // infeasible sign pattern clamps to zero rather than going negative
        let s = nnls(&a, &DVector::from_vec(vec![-1.0, -1.0, -1.0]));
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn silence_stays_quiet() {
        let mel = mel_spectrogram(&Waveform::new(vec![0.0; 8000])).unwrap();
        let out = griffin_lim(&mel, 4);
        let rms =
            (out.samples.iter().map(|v| v * v).sum::<f64>() / out.samples.len() as f64).sqrt();
        assert!(rms < 1e-3, "{rms}");
    }
}
