//! Band-limited resampling with a Hann-windowed sinc kernel.

use std::f64::consts::PI;

const HALF_TAPS: f64 = 16.0;

fn kernel(x: f64, cutoff: f64) -> f64 {
    if x.abs() >= HALF_TAPS / cutoff {
        return 0.0;
    }
    let sinc = if x == 0.0 {
        1.0
    } else {
        (PI * cutoff * x).sin() / (PI * cutoff * x)
    };
    let window = 0.5 + 0.5 * (PI * x * cutoff / HALF_TAPS).cos();
    cutoff * sinc * window
}

/// Reads `x` at positions `0, step, 2·step, …` producing `len` samples.
/// `step > 1` compresses time (raises pitch) with an anti-aliasing cutoff.
pub fn read_at_rate(x: &[f64], step: f64, len: usize) -> Vec<f64> {
    if step == 1.0 {
        let mut out = x.to_vec();
        out.resize(len, 0.0);
        return out;
    }
    let cutoff = (1.0 / step).min(1.0) * 0.97;
    let reach = (HALF_TAPS / cutoff).ceil() as isize;
    (0..len)
        .map(|m| {
            let pos = m as f64 * step;
            let center = pos.floor() as isize;
            let mut acc = 0.0;
            for k in center - reach..=center + reach {
                if k >= 0 && (k as usize) < x.len() {
                    acc += x[k as usize] * kernel(pos - k as f64, cutoff);
                }
            }
            acc
        })
        .collect()
}

/// Converts between sample rates.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let step = from as f64 / to as f64;
    let len = ((x.len() as f64) / step).round() as usize;
    read_at_rate(x, step, len)
}
