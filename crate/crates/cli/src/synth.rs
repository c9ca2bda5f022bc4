//! Inference from a checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dtts::autodiff::{Graph, ParamStore};
use dtts::corpus::Vocabulary;
use dtts::model::{threshold_logits, Mode, Model};
use dtts::signal::io::{write_record, write_wav};
use dtts::signal::{griffin_lim, MelSpectrogram};
use dtts::targets::{BinarySeq, DurationSeq};
use dtts::training::Checkpoint;
use dtts::Tensor;
use serde::Serialize;

pub const GRIFFIN_LIM_ITERS: usize = 32;

/// A frozen model ready for inference.
pub struct Synthesizer {
    pub model: Model,
    pub params: ParamStore<f32>,
    pub vocab: Vocabulary,
}

/// Inference outputs converted to 64-bit.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub mel: Tensor<f64>,
    pub ld_projection: Tensor<f64>,
    pub sd_projection: Tensor<f64>,
    pub durations: DurationSeq,
    pub ld_pitch: BinarySeq,
    pub ld_energy: BinarySeq,
    pub sd_pitch: Vec<f64>,
    pub sd_energy: Vec<f64>,
}

#[derive(Serialize)]
struct Dump<'a> {
    text: &'a str,
    language: usize,
    speaker: usize,
    frames: usize,
    durations: &'a [usize],
    ld_pitch: &'a [u8],
    ld_energy: &'a [u8],
    sd_pitch: &'a [f64],
    sd_energy: &'a [f64],
}

impl Synthesizer {
    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let model = Model::attach(&ck.train.model, &ck.state.params)?;
        Ok(Self {
            model,
            params: ck.state.params,
            vocab: ck.vocab,
        })
    }

    /// End-to-end inference; `durations` replaces the duration head.
    pub fn predict(
        &self,
        tokens: &[usize],
        language: usize,
        speaker: usize,
        durations: Option<&DurationSeq>,
    ) -> Result<Prediction> {
        let mut g = Graph::new(&self.params);
        let s = self.model.synthesize(
            &mut g,
            tokens,
            language,
            speaker,
            Mode::Infer { durations },
            None,
        )?;
        let col = |v| {
            g.value(v)
                .data()
                .iter()
                .map(|&x: &f32| f64::from(x))
                .collect::<Vec<_>>()
        };
        Ok(Prediction {
            mel: g.value(s.mel).cast(),
            ld_projection: g.value(s.ld_projection).cast(),
            sd_projection: g.value(s.sd_projection).cast(),
            ld_pitch: threshold_logits(g.value(s.ldv.pitch_logits).data()),
            ld_energy: threshold_logits(g.value(s.ldv.energy_logits).data()),
            sd_pitch: col(s.sd_pitch),
            sd_energy: col(s.sd_energy),
            durations: s.durations,
        })
    }
}

/// Files written next to the wav.
pub fn dump_paths(wav: &Path) -> (PathBuf, PathBuf) {
    (
        wav.with_extension("mel.bin"),
        wav.with_extension("predictions.toml"),
    )
}

pub fn synth(
    ckpt: &Path,
    text: &str,
    language: usize,
    speaker: usize,
    out: &Path,
) -> Result<Prediction> {
    let s = Synthesizer::load(ckpt)?;
    let tokens = s.vocab.encode(text)?;
    let p = s.predict(&tokens, language, speaker, None)?;
    let wave = griffin_lim(
        &MelSpectrogram {
            frames: p.mel.clone(),
        },
        GRIFFIN_LIM_ITERS,
    );
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_wav(out, &wave)?;
    let (mel_path, dump_path) = dump_paths(out);
    write_record(&mel_path, &p.mel)?;
    let dump = Dump {
        text,
        language,
        speaker,
        frames: p.mel.rows(),
        durations: &p.durations.0,
        ld_pitch: &p.ld_pitch.0,
        ld_energy: &p.ld_energy.0,
        sd_pitch: &p.sd_pitch,
        sd_energy: &p.sd_energy,
    };
    fs::write(&dump_path, toml::to_string(&dump)?)
        .with_context(|| format!("writing {}", dump_path.display()))?;
    Ok(p)
}
