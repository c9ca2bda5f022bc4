//! Linguistic targets: perturbed waveform → SSL features → linguistic
//! encoder, trimmed to the mel length.

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::model::LinguisticEncoder;
use crate::signal::{perturb, PerturbConfig, Waveform};
use crate::tensor::{Real, Tensor};

use super::ssl::SslProvider;

/// Largest tolerated difference between SSL and mel frame counts.
pub const MAX_FRAME_DRIFT: usize = 2;

/// SSL features of the perturbed waveform. File-mode features were
/// computed externally, so no perturbation is applied here.
pub fn perturbed_ssl(
    w: &Waveform,
    cfg: &PerturbConfig,
    provider: &SslProvider,
    utterance: &str,
) -> Result<Tensor<f64>> {
    match provider {
        SslProvider::File { .. } => provider.features(w, utterance),
        SslProvider::Stub { .. } => provider.features(&perturb(w, cfg)?, utterance),
    }
}

/// First `frames` rows of `x`, padding by repetition of the last row when
/// `x` is at most [`MAX_FRAME_DRIFT`] rows short.
pub fn trim_to<T: Real>(x: &Tensor<T>, frames: usize) -> Result<Tensor<T>> {
    if x.rows().abs_diff(frames) > MAX_FRAME_DRIFT || x.rows() == 0 {
        return Err(Error::Input(format!(
            "feature length {} is incompatible with {frames} mel frames",
            x.rows()
        )));
    }
    Ok(Tensor::from_fn(frames, x.cols(), |r, c| {
        x.get(r.min(x.rows() - 1), c)
    }))
}

/// `linguistic_encoder(ssl(perturb(w)))` with `frames` rows.
pub fn build_linguistic_targets<T: Real>(
    w: &Waveform,
    cfg: &PerturbConfig,
    provider: &SslProvider,
    utterance: &str,
    encoder: &LinguisticEncoder,
    store: &ParamStore<T>,
    frames: usize,
) -> Result<Tensor<T>> {
    let ssl = trim_to(
        &perturbed_ssl(w, cfg, provider, utterance)?.cast::<T>(),
        frames,
    )?;
    Ok(encoder.encode(store, &ssl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn voice() -> Waveform {
        let samples = (0..8000)
            .map(|n| {
                let t = n as f64 / 16_000.0;
                (1..6)
                    .map(|k| (2.0 * std::f64::consts::PI * 150.0 * k as f64 * t).sin() / k as f64)
                    .sum::<f64>()
                    * 0.2
            })
            .collect();
        Waveform::new(samples)
    }

    #[test]
    fn width_trim_and_perturbation_dependence() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = LinguisticEncoder::new(
            &mut Init {
                store: &mut store,
                rng: &mut rng,
            },
            "e",
            64,
            192,
            5,
        );
        let provider = SslProvider::Stub { seed: 3, dim: 64 };
        let w = voice();
        let frames = 1 + 8000 / 320;
        let ident = build_linguistic_targets(
            &w,
            &PerturbConfig::identity(),
            &provider,
            "u",
            &enc,
            &store,
            frames,
        )
        .unwrap();
        assert_eq!(ident.shape(), (frames, 192));
        let cfg = PerturbConfig {
            seed: 5,
            ..PerturbConfig::default()
        };
        let pert =
            build_linguistic_targets(&w, &cfg, &provider, "u", &enc, &store, frames).unwrap();
        assert!(ident.max_abs_diff(&pert) > 1e-3);
        let short =
            build_linguistic_targets(&w, &cfg, &provider, "u", &enc, &store, frames - 2).unwrap();
        assert_eq!(short.rows(), frames - 2);
    }

    #[test]
    fn trim_policy() {
        let x = Tensor::<f64>::from_fn(12, 3, |r, _| r as f64);
        assert_eq!(trim_to(&x, 10).unwrap().rows(), 10);
        assert_eq!(trim_to(&x, 14).unwrap().get(13, 0), 11.0);
        assert!(trim_to(&x, 15).is_err());
    }
}
