//! Synthetic two-language, multi-speaker corpus of vowel-like harmonic
//! signals.
//!
//! Every pseudo-phoneme has its own tone level, loudness and two formants;
//! every speaker has its own f0 base and formant scale. Utterances are short
//! phoneme strings without immediate repeats, rendered with smooth pitch and
//! loudness glides between phonemes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::signal::io::write_wav;
use crate::signal::Waveform;
use crate::{HOP, SAMPLE_RATE};

#[derive(Clone, Debug)]
pub struct Phoneme {
    pub symbol: &'static str,
    pub tone: f64,
    pub loudness: f64,
    pub formants: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct Speaker {
    pub language: usize,
    pub f0: f64,
    pub formant_scale: f64,
}

#[derive(Clone, Debug)]
pub struct ToyConfig {
    pub utterances_per_speaker: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    /// Frames per phoneme, inclusive range.
    pub frames_per_phoneme: (usize, usize),
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            utterances_per_speaker: 8,
            min_phonemes: 4,
            max_phonemes: 6,
            frames_per_phoneme: (4, 8),
            seed: 0,
        }
    }
}

const fn ph(symbol: &'static str, tone: f64, loudness: f64, f1: f64, f2: f64) -> Phoneme {
    Phoneme {
        symbol,
        tone,
        loudness,
        formants: [f1, f2],
    }
}

/// Phoneme inventories of the two pseudo-languages.
pub fn inventories() -> [Vec<Phoneme>; 2] {
    [
        vec![
            ph("a", 1.00, 0.50, 800.0, 1300.0),
            ph("e", 1.22, 0.35, 450.0, 2100.0),
            ph("i", 1.40, 0.25, 300.0, 2500.0),
            ph("o", 0.86, 0.42, 500.0, 900.0),
            ph("u", 0.74, 0.30, 330.0, 750.0),
        ],
        vec![
            ph("ɑ", 0.78, 0.45, 720.0, 1100.0),
            ph("ɛ", 1.10, 0.28, 560.0, 1850.0),
            ph("ɪ", 1.32, 0.38, 400.0, 2200.0),
            ph("ɔ", 0.92, 0.22, 600.0, 950.0),
            ph("ʊ", 1.18, 0.48, 420.0, 1050.0),
        ],
    ]
}

/// Two speakers per language with distinct pitch and vocal-tract scale.
pub fn speakers() -> Vec<Speaker> {
    vec![
        Speaker {
            language: 0,
            f0: 110.0,
            formant_scale: 1.00,
        },
        Speaker {
            language: 0,
            f0: 210.0,
            formant_scale: 1.18,
        },
        Speaker {
            language: 1,
            f0: 130.0,
            formant_scale: 0.94,
        },
        Speaker {
            language: 1,
            f0: 240.0,
            formant_scale: 1.24,
        },
    ]
}

pub fn vocabulary() -> Vocabulary {
    Vocabulary::new(
        inventories()
            .iter()
            .flatten()
            .map(|p| p.symbol.to_string())
            .collect(),
    )
    .expect("toy inventory symbols are distinct")
}

/// One rendered utterance with its phoneme indices within the language.
#[derive(Clone, Debug)]
pub struct ToyUtterance {
    pub phonemes: Vec<usize>,
    pub frames: Vec<usize>,
    pub wave: Waveform,
}

/// Spectral envelope: two resonances over a gentle tilt.
fn envelope(f: f64, formants: [f64; 2], scale: f64) -> f64 {
    let res = |center: f64, bw: f64| 1.0 / (1.0 + ((f - center * scale) / bw).powi(2));
    0.05 / (1.0 + f / 1000.0) + res(formants[0], 90.0) + 0.7 * res(formants[1], 130.0)
}

/// Renders a phoneme sequence for `speaker`; `frames[i]` hops per phoneme.
pub fn render(
    phonemes: &[usize],
    frames: &[usize],
    speaker: &Speaker,
    noise_seed: u64,
) -> ToyUtterance {
    let inv = &inventories()[speaker.language];
    let hop = HOP;
    let total: usize = frames.iter().sum::<usize>() * hop;
    // per-sample phoneme position with 20 ms linear glides at boundaries
    let glide = hop as f64;
    let mut bounds = Vec::with_capacity(phonemes.len() + 1);
    let mut acc = 0usize;
    bounds.push(0usize);
    for &f in frames {
        acc += f * hop;
        bounds.push(acc);
    }
    let param = |n: usize, get: &dyn Fn(&Phoneme) -> f64| -> f64 {
        let i = bounds
            .partition_point(|&b| b <= n)
            .saturating_sub(1)
            .min(phonemes.len() - 1);
        let here = get(&inv[phonemes[i]]);
        if i > 0 {
            let since = (n - bounds[i]) as f64;
            if since < glide / 2.0 {
                let prev = get(&inv[phonemes[i - 1]]);
                let w = 0.5 + since / glide;
                return prev + (here - prev) * w;
            }
        }
        if i + 1 < phonemes.len() {
            let until = (bounds[i + 1] - n) as f64;
            if until <= glide / 2.0 {
                let next = get(&inv[phonemes[i + 1]]);
                let w = 0.5 - until / glide;
                return here + (next - here) * w;
            }
        }
        here
    };
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let sr = SAMPLE_RATE as f64;
    let mut phase = 0.0f64;
    let mut samples = Vec::with_capacity(total);
    let fade = (0.01 * sr) as usize;
    for n in 0..total {
        let f0 = speaker.f0 * param(n, &|p| p.tone);
        let loud = param(n, &|p| p.loudness);
        let i = bounds
            .partition_point(|&b| b <= n)
            .saturating_sub(1)
            .min(phonemes.len() - 1);
        let formants = inv[phonemes[i]].formants;
        phase += 2.0 * PI * f0 / sr;
        let mut s = 0.0;
        let mut k = 1;
        while k as f64 * f0 < 4000.0 {
            let f = k as f64 * f0;
            s += envelope(f, formants, speaker.formant_scale) * (k as f64 * phase).sin();
            k += 1;
        }
        let edge = (n.min(total - 1 - n) as f64 / fade as f64).min(1.0);
        samples.push(0.25 * loud * edge * s + 1e-4 * rng.random_range(-1.0..1.0));
    }
    ToyUtterance {
        phonemes: phonemes.to_vec(),
        frames: frames.to_vec(),
        wave: Waveform::new(samples),
    }
}

/// Random phoneme string without immediate repeats.
fn draw(cfg: &ToyConfig, n_phonemes: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let len = rng.random_range(cfg.min_phonemes..=cfg.max_phonemes);
    let mut ph: Vec<usize> = Vec::with_capacity(len);
    while ph.len() < len {
        let p = rng.random_range(0..n_phonemes);
        if ph.last() != Some(&p) {
            ph.push(p);
        }
    }
    let (lo, hi) = cfg.frames_per_phoneme;
    let frames = (0..len).map(|_| rng.random_range(lo..=hi)).collect();
    (ph, frames)
}

/// Writes wavs, `manifest.tsv` and `vocab.txt` under `out`; returns the
/// manifest path.
pub fn generate(out: &Path, cfg: &ToyConfig) -> Result<PathBuf> {
    if cfg.min_phonemes == 0 || cfg.min_phonemes > cfg.max_phonemes || cfg.frames_per_phoneme.0 == 0
    {
        return Err(Error::Config(
            "toy corpus needs 1 ≤ min ≤ max phonemes and ≥ 1 frame each".into(),
        ));
    }
    let wav_dir = out.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let inv = inventories();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut manifest = String::new();
    for (s, spk) in speakers().iter().enumerate() {
        for u in 0..cfg.utterances_per_speaker {
            let (ph, frames) = draw(cfg, inv[spk.language].len(), &mut rng);
            let utt = render(&ph, &frames, spk, rng.random());
            let id = format!("s{s}_{u:03}");
            let rel = format!("wav/{id}.wav");
            write_wav(&out.join(&rel), &utt.wave)?;
            let text: Vec<&str> = ph.iter().map(|&p| inv[spk.language][p].symbol).collect();
            manifest.push_str(&format!(
                "{id}\t{rel}\t{}\t{}\t{s}\n",
                text.join(" "),
                spk.language
            ));
        }
    }
    let path = out.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    vocabulary().save(&out.join("vocab.txt"))?;
    Ok(path)
}
