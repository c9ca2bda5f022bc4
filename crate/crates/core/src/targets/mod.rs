//! Supervision targets: per-token averages and binary rise/fall sequences
//! for the language-dependent adaptor, speaker-standardized frame targets
//! for the speaker-dependent adaptor, and SSL-derived linguistic features.

pub mod linguistic;
pub mod ssl;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::signal::PitchTrack;

pub use linguistic::build_linguistic_targets;
pub use ssl::SslProvider;

/// Frames per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DurationSeq(pub Vec<usize>);

impl DurationSeq {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Token index for every frame.
    pub fn frame_tokens(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
            .collect()
    }

    pub fn check_total(&self, frames: usize) -> Result<()> {
        if self.total() != frames {
            return Err(Error::Input(format!(
                "durations sum to {} but the sequence has {frames} frames",
                self.total()
            )));
        }
        Ok(())
    }
}

/// Token-level {0, 1} sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinarySeq(pub Vec<u8>);

impl BinarySeq {
    pub fn as_reals<T: crate::Real>(&self) -> Vec<T> {
        self.0.iter().map(|&b| T::from_u8(b).unwrap()).collect()
    }
}

/// Mean of the frames assigned to each token. Zero-length tokens copy the
/// previous token's value (0 for the first token).
pub fn average_per_token(frames: &[f64], d: &DurationSeq) -> Result<Vec<f64>> {
    d.check_total(frames.len())?;
    let mut out = Vec::with_capacity(d.len());
    let mut start = 0;
    let mut prev = 0.0;
    for &n in &d.0 {
        let v = if n == 0 {
            prev
        } else {
            frames[start..start + n].iter().sum::<f64>() / n as f64
        };
        out.push(v);
        prev = v;
        start += n;
    }
    Ok(out)
}

/// 1 where the value strictly rises from the previous token; the first
/// token is always 0.
pub fn binarize(avg: &[f64]) -> BinarySeq {
    let mut out = Vec::with_capacity(avg.len());
    if !avg.is_empty() {
        out.push(0);
    }
    out.extend(avg.windows(2).map(|w| u8::from(w[0] < w[1])));
    BinarySeq(out)
}

/// Binary language-dependent pitch and energy targets.
pub fn build_ld_targets(
    pitch: &PitchTrack,
    energy: &[f64],
    d: &DurationSeq,
) -> Result<(BinarySeq, BinarySeq)> {
    if pitch.f0.len() != energy.len() {
        return Err(Error::Input(format!(
            "pitch has {} frames, energy {}",
            pitch.f0.len(),
            energy.len()
        )));
    }
    let p = binarize(&average_per_token(&pitch.f0, d)?);
    let e = binarize(&average_per_token(energy, d)?);
    Ok((p, e))
}

/// Voiced-pitch moments of one speaker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchMoments {
    pub mean: f64,
    pub std: f64,
}

/// Corpus-wide per-speaker pitch statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpeakerStats {
    pub speakers: BTreeMap<usize, PitchMoments>,
}

impl SpeakerStats {
    /// Sequential reduction over `(speaker, track)` pairs.
    pub fn from_tracks<'a>(tracks: impl IntoIterator<Item = (usize, &'a PitchTrack)>) -> Self {
        let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
        for (spk, track) in tracks {
            let e = acc.entry(spk).or_default();
            for &f in track.f0.iter().filter(|&&f| f > 0.0) {
                e.0 += f;
                e.1 += f * f;
                e.2 += 1;
            }
        }
        let speakers = acc
            .into_iter()
            .map(|(spk, (s, s2, n))| {
                let n = n.max(1) as f64;
                let mean = s / n;
                let var = (s2 / n - mean * mean).max(0.0);
                (
                    spk,
                    PitchMoments {
                        mean,
                        std: var.sqrt(),
                    },
                )
            })
            .collect();
        Self { speakers }
    }

    pub fn get(&self, speaker: usize) -> Result<PitchMoments> {
        self.speakers
            .get(&speaker)
            .copied()
            .ok_or_else(|| Error::Input(format!("no pitch statistics for speaker {speaker}")))
    }
}

/// Frame-level speaker-dependent targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SdTargets {
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

/// Standardizes voiced pitch with the speaker's moments (unvoiced → 0) and
/// passes energy through.
pub fn build_sd_targets(
    pitch: &PitchTrack,
    energy: &[f64],
    stats: PitchMoments,
) -> Result<SdTargets> {
    if pitch.f0.len() != energy.len() {
        return Err(Error::Input("pitch/energy length mismatch".into()));
    }
    let std = if stats.std > 0.0 {
        stats.std
    } else {
        log::warn!("speaker pitch std is 0; using 1");
        1.0
    };
    Ok(SdTargets {
        pitch: pitch
            .f0
            .iter()
            .map(|&f| if f > 0.0 { (f - stats.mean) / std } else { 0.0 })
            .collect(),
        energy: energy.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn segment_oracle(frames: &[f64], d: &[usize]) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        let mut pos = 0;
        for &n in d {
            let seg = &frames[pos..pos + n];
            pos += n;
            out.push(if seg.is_empty() {
                out.last().copied().unwrap_or(0.0)
            } else {
                seg.iter().sum::<f64>() / seg.len() as f64
            });
        }
        out
    }

    #[test]
    fn averaging_examples() {
        let d = DurationSeq(vec![2, 2]);
        assert_eq!(
            average_per_token(&[1.0, 2.0, 3.0, 4.0], &d).unwrap(),
            vec![1.5, 3.5]
        );
        let d = DurationSeq(vec![4]);
        assert_eq!(
            average_per_token(&[1.0, 2.0, 3.0, 6.0], &d).unwrap(),
            vec![3.0]
        );
        assert!(average_per_token(&[1.0], &DurationSeq(vec![2])).is_err());
        let d = DurationSeq(vec![0, 2, 0, 1]);
        assert_eq!(
            average_per_token(&[2.0, 4.0, 7.0], &d).unwrap(),
            vec![0.0, 3.0, 3.0, 7.0]
        );
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[100.0, 120.0, 110.0]).0, vec![0, 1, 0]);
        assert_eq!(binarize(&[5.0; 6]).0, vec![0; 6]);
        assert_eq!(binarize(&[]).0, Vec::<u8>::new());
    }

    #[test]
    fn ld_targets_examples() {
        let pitch = PitchTrack {
            f0: (0..9).map(|i| 100.0 + i as f64).collect(),
        };
        let energy = vec![0.0; 9];
        let d = DurationSeq(vec![3, 1, 4, 1]);
        let (p, e) = build_ld_targets(&pitch, &energy, &d).unwrap();
        assert_eq!(p.0, vec![0, 1, 1, 1]);
        assert_eq!(e.0, vec![0, 0, 0, 0]);
    }

    #[test]
    fn sd_standardization() {
        let stats = PitchMoments {
            mean: 200.0,
            std: 50.0,
        };
        let t = build_sd_targets(
            &PitchTrack {
                f0: vec![250.0, 0.0],
            },
            &[1.0, 2.0],
            stats,
        )
        .unwrap();
        assert_eq!(t.pitch, vec![1.0, 0.0]);
        assert_eq!(t.energy, vec![1.0, 2.0]);
        let zero = PitchMoments {
            mean: 200.0,
            std: 0.0,
        };
        let t = build_sd_targets(&PitchTrack { f0: vec![201.0] }, &[0.0], zero).unwrap();
        assert_eq!(t.pitch, vec![1.0]);
    }

    fn frames_and_durations() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        frames_for(0)
    }

    fn frames_for(min_frames: usize) -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        prop::collection::vec(min_frames..5, 1..12).prop_flat_map(|d| {
            let t: usize = d.iter().sum();
            (prop::collection::vec(-50.0f64..50.0, t), Just(d))
        })
    }

    proptest! {
        #[test]
        fn averaging_matches_segmentation((frames, d) in frames_and_durations()) {
            let got = average_per_token(&frames, &DurationSeq(d.clone())).unwrap();
            prop_assert_eq!(got, segment_oracle(&frames, &d));
        }

        #[test]
        fn reexpansion_preserves_token_sums((frames, d) in frames_and_durations()) {
            let avg = average_per_token(&frames, &DurationSeq(d.clone())).unwrap();
            let mut pos = 0;
            for (i, &n) in d.iter().enumerate() {
                let direct: f64 = frames[pos..pos + n].iter().sum();
                prop_assert!((avg[i] * n as f64 - direct).abs() < 1e-9);
                pos += n;
            }
        }

        #[test]
        fn binarize_is_binary_and_matches_pairwise(avg in prop::collection::vec(-1e3f64..1e3, 1..50)) {
            let b = binarize(&avg);
            prop_assert_eq!(b.0.len(), avg.len());
            prop_assert_eq!(b.0[0], 0);
            for i in 1..avg.len() {
                prop_assert_eq!(b.0[i] == 1, avg[i - 1] < avg[i]);
            }
        }

        #[test]
        fn ld_targets_invariant_to_increasing_affine_maps(
            (frames, d) in frames_for(1),
            scale in 1u32..5,
            offset in -100i32..100,
        ) {
            // integer-valued frames keep every mean exactly comparable; a
            // zero-length token takes a constant fill, which maps do not move
            let frames: Vec<f64> = frames.iter().map(|v| v.round()).collect();
            let d = DurationSeq(d);
            let map = |v: f64| scale as f64 * v + offset as f64;
            let p = PitchTrack { f0: frames.clone() };
            let mapped = PitchTrack { f0: frames.iter().map(|&v| map(v)).collect() };
            let e_mapped: Vec<f64> = frames.iter().map(|&v| map(v)).collect();
            prop_assert_eq!(
                build_ld_targets(&p, &frames, &d).unwrap(),
                build_ld_targets(&mapped, &e_mapped, &d).unwrap()
            );
        }

        #[test]
        fn single_frame_tokens_invariant_to_any_increasing_map(
            frames in prop::collection::vec(1.0f64..1000.0, 1..30),
        ) {
            let d = DurationSeq(vec![1; frames.len()]);
            let hz = PitchTrack { f0: frames.clone() };
            let log_hz = PitchTrack { f0: frames.iter().map(|v| v.ln()).collect() };
            let e: Vec<f64> = frames.iter().map(|v| v.exp().min(1e300)).collect();
            let (p1, _) = build_ld_targets(&hz, &frames, &d).unwrap();
            let (p2, _) = build_ld_targets(&log_hz, &e, &d).unwrap();
            prop_assert_eq!(p1, p2);
        }
    }
}
