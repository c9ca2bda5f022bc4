//! Trainable networks: embeddings, the language-dependent generator, the
//! speaker-dependent generator, the linguistic branch and the aligner.

pub mod conformer;
pub mod linguistic;
pub mod norm;
pub mod sdg;
pub mod variance;

#[cfg(test)]
mod tests;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::Aligner;
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{positional_encoding, Conv1d, Init};
use crate::targets::{BinarySeq, DurationSeq};
use crate::tensor::Real;

pub use conformer::{glu, BlockConfig, ConformerBlock, SpeakerCond, Tail, TailKind};
pub use linguistic::{LinguisticAdaptor, LinguisticEncoder, TextPredictor};
pub use norm::{batch_shuffle, mix_statistics, random_permutation, sample_gamma, SpeakerNorm};
pub use sdg::{SdGenerator, SdOut};
pub use variance::{
    durations_from_log, length_regulate, log_duration_target, threshold_logits, LdvAdaptor, LdvOut,
    VariancePredictor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_languages: usize,
    pub n_speakers: usize,
    pub hidden: usize,
    pub ff_mult: usize,
    pub conv_kernel: usize,
    pub norm_kernel: usize,
    pub ld_encoder_blocks: usize,
    pub ld_decoder_blocks: usize,
    pub sd_encoder_blocks: usize,
    pub sd_decoder_blocks: usize,
    pub text_predictor_blocks: usize,
    pub predictor_kernel: usize,
    pub embed_kernel: usize,
    pub glu_kernel: usize,
    pub ssl_dim: usize,
    pub n_mels: usize,
    pub dropout: f64,
    pub embedding_bound: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1,
            n_languages: 1,
            n_speakers: 1,
            hidden: 192,
            ff_mult: 4,
            conv_kernel: 7,
            norm_kernel: 3,
            ld_encoder_blocks: 4,
            ld_decoder_blocks: 2,
            sd_encoder_blocks: 2,
            sd_decoder_blocks: 2,
            text_predictor_blocks: 2,
            predictor_kernel: 3,
            embed_kernel: 3,
            glu_kernel: 5,
            ssl_dim: crate::targets::ssl::DEFAULT_SSL_DIM,
            n_mels: crate::N_MELS,
            dropout: 0.1,
            embedding_bound: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("n_languages", self.n_languages),
            ("n_speakers", self.n_speakers),
            ("hidden", self.hidden),
            ("ff_mult", self.ff_mult),
            ("ssl_dim", self.ssl_dim),
            ("n_mels", self.n_mels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, k) in [
            ("conv_kernel", self.conv_kernel),
            ("norm_kernel", self.norm_kernel),
            ("predictor_kernel", self.predictor_kernel),
            ("embed_kernel", self.embed_kernel),
            ("glu_kernel", self.glu_kernel),
        ] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd, got {k}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    fn block(&self, tail: TailKind) -> BlockConfig {
        BlockConfig {
            dim: self.hidden,
            ff_mult: self.ff_mult,
            conv_kernel: self.conv_kernel,
            norm_kernel: self.norm_kernel,
            tail,
        }
    }
}

/// Parameter handles of the full network. The tensors live in a
/// [`ParamStore`] built alongside.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub token_table: ParamId,
    pub language_table: ParamId,
    pub speaker_table: ParamId,
    pub ld_encoder: Vec<ConformerBlock>,
    pub ldv: LdvAdaptor,
    pub ld_decoder: Vec<ConformerBlock>,
    pub linguistic_adaptor: LinguisticAdaptor,
    pub sdg: SdGenerator,
    pub proj_ld: Conv1d,
    pub proj_sd: Conv1d,
    pub linguistic_encoder: LinguisticEncoder,
    pub text_predictor: TextPredictor,
    pub aligner: Aligner,
}

/// Token-level inputs after the lookup tables.
#[derive(Clone, Copy, Debug)]
pub struct Embedded {
    /// Raw token embeddings.
    pub tokens: Var,
    /// Token embeddings plus the language embedding.
    pub h: Var,
    pub e_l: Var,
    pub e_s: Var,
}

/// Partner speaker for MDSLN statistics mixing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mixing {
    pub partner: usize,
    pub gamma: f64,
}

/// Ground-truth values injected in training mode.
#[derive(Clone, Debug)]
pub struct TeacherForcing<T> {
    pub durations: DurationSeq,
    pub ld_pitch: BinarySeq,
    pub ld_energy: BinarySeq,
    /// `T × hidden` linguistic target (already stop-gradiented).
    pub linguistic: Var,
    pub sd_pitch: Vec<T>,
    pub sd_energy: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
pub enum Mode<'a, T> {
    Train(&'a TeacherForcing<T>),
    /// End-to-end prediction; `durations` optionally overrides the
    /// duration head (used to compare speakers on a common time axis).
    Infer {
        durations: Option<&'a DurationSeq>,
    },
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub mel: Var,
    pub ld_projection: Var,
    pub sd_projection: Var,
    /// LD output after the linguistic adaptor, frame level.
    pub h_ld: Var,
    pub h_sd: Var,
    pub ldv: LdvOut,
    pub linguistic: Var,
    pub sd_pitch: Var,
    pub sd_energy: Var,
    pub durations: DurationSeq,
    pub embedded: Embedded,
}

impl Model {
    /// Registers every parameter in `store` in a fixed order.
    pub fn build<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = &mut Init {
            store,
            rng: &mut rng,
        };
        let d = cfg.hidden;
        let eb = cfg.embedding_bound;
        let token_table = init.uniform("embed.tokens", cfg.vocab_size, d, eb);
        let language_table = init.uniform("embed.languages", cfg.n_languages, d, eb);
        let speaker_table = init.uniform("embed.speakers", cfg.n_speakers, d, eb);
        let stack =
            |init: &mut Init<T>, name: &str, n: usize, tail: TailKind| -> Vec<ConformerBlock> {
                (0..n)
                    .map(|i| ConformerBlock::new(init, &format!("{name}{i}"), &cfg.block(tail)))
                    .collect()
            };
        let ld_encoder = stack(init, "ld.encoder", cfg.ld_encoder_blocks, TailKind::Mdsln);
        let ldv = LdvAdaptor::new(init, "ld.ldv", d, cfg.predictor_kernel, cfg.embed_kernel);
        let ld_decoder = stack(
            init,
            "ld.decoder",
            cfg.ld_decoder_blocks,
            TailKind::LayerNorm,
        );
        let linguistic_adaptor = LinguisticAdaptor::new(
            init,
            "ld.linguistic",
            d,
            cfg.predictor_kernel,
            cfg.embed_kernel,
        );
        let sdg = SdGenerator::new(
            init,
            "sd",
            &cfg.block(TailKind::Dsln),
            &sdg::SdSizes {
                encoder_blocks: cfg.sd_encoder_blocks,
                decoder_blocks: cfg.sd_decoder_blocks,
                predictor_kernel: cfg.predictor_kernel,
                embed_kernel: cfg.embed_kernel,
            },
        );
        let proj_ld = Conv1d::new(init, "proj.ld", d, cfg.n_mels, 1);
        let proj_sd = Conv1d::new(init, "proj.sd", d, cfg.n_mels, 1);
        let linguistic_encoder =
            LinguisticEncoder::new(init, "ling.encoder", cfg.ssl_dim, d, cfg.glu_kernel);
        let text_predictor = TextPredictor::new(
            init,
            "ling.text",
            &cfg.block(TailKind::LayerNorm),
            cfg.text_predictor_blocks,
            cfg.vocab_size,
        );
        let aligner = Aligner::new(init, "aligner", d, cfg.n_mels);
        Ok(Self {
            cfg: cfg.clone(),
            token_table,
            language_table,
            speaker_table,
            ld_encoder,
            ldv,
            ld_decoder,
            linguistic_adaptor,
            sdg,
            proj_ld,
            proj_sd,
            linguistic_encoder,
            text_predictor,
            aligner,
        })
    }

    /// Rebuilds the parameter handles for an existing store, checking that
    /// names and shapes match the configuration.
    pub fn attach<T: Real>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let mut fresh = ParamStore::<T>::new();
        let model = Self::build(cfg, &mut fresh, 0)?;
        if fresh.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                fresh.len(),
                store.len()
            )));
        }
        for ((name, a), (other, b)) in fresh.iter().zip(store.iter()) {
            if name != other || a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {other} {:?} does not match {name} {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(model)
    }

    fn lookup(&self, kind: &'static str, id: usize, size: usize) -> Result<()> {
        if id >= size {
            return Err(Error::Lookup { kind, id, size });
        }
        Ok(())
    }

    /// Validates ids against the lookup tables.
    pub fn check_ids(&self, tokens: &[usize], lang: usize, spk: usize) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        for &t in tokens {
            self.lookup("token", t, self.cfg.vocab_size)?;
        }
        self.lookup("language", lang, self.cfg.n_languages)?;
        self.lookup("speaker", spk, self.cfg.n_speakers)
    }

    pub fn embed_text<T: Real>(
        &self,
        g: &mut Graph<T>,
        tokens: &[usize],
        lang: usize,
        spk: usize,
    ) -> Result<Embedded> {
        self.check_ids(tokens, lang, spk)?;
        let table = g.param(self.token_table);
        let tok = g.gather(table, tokens);
        let e_l = self.speaker_row(g, self.language_table, lang);
        let e_s = self.speaker_row(g, self.speaker_table, spk);
        let h = g.add_row(tok, e_l);
        Ok(Embedded {
            tokens: tok,
            h,
            e_l,
            e_s,
        })
    }

    fn speaker_row<T: Real>(&self, g: &mut Graph<T>, table: ParamId, id: usize) -> Var {
        let t = g.param(table);
        g.gather(t, &[id])
    }

    /// Speaker embedding row as a graph node.
    pub fn speaker_embedding<T: Real>(&self, g: &mut Graph<T>, spk: usize) -> Result<Var> {
        self.lookup("speaker", spk, self.cfg.n_speakers)?;
        Ok(self.speaker_row(g, self.speaker_table, spk))
    }

    /// LD encoder output (token level).
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        emb: &Embedded,
        mix: Option<(Var, f64)>,
    ) -> Var {
        let (n, d) = g.shape(emb.h);
        let pe = g.input(positional_encoding(n, d));
        let mut x = g.add(emb.h, pe);
        let cond = SpeakerCond { e_s: emb.e_s, mix };
        for b in &self.ld_encoder {
            x = b.forward(g, x, Some(cond));
        }
        x
    }

    /// Runs everything after the lookup tables.
    pub fn generate<T: Real>(
        &self,
        g: &mut Graph<T>,
        emb: &Embedded,
        mode: Mode<'_, T>,
        mixing: Option<Mixing>,
    ) -> Result<Synthesis> {
        let mix = match mixing {
            Some(m) => {
                if !(0.0..=1.0).contains(&m.gamma) {
                    return Err(Error::Input(format!(
                        "mixing coefficient {} outside [0, 1]",
                        m.gamma
                    )));
                }
                Some((self.speaker_embedding(g, m.partner)?, m.gamma))
            }
            None => None,
        };
        let h_enc = self.encode(g, emb, mix);
        let ldv = match mode {
            Mode::Train(t) => self
                .ldv
                .forward(g, h_enc, Some((&t.ld_pitch, &t.ld_energy)))?,
            Mode::Infer { .. } => self.ldv.forward(g, h_enc, None)?,
        };
        let durations = match mode {
            Mode::Train(t) => t.durations.clone(),
            Mode::Infer { durations: Some(d) } => d.clone(),
            Mode::Infer { durations: None } => {
                durations_from_log(g.value(ldv.log_durations).data())
            }
        };
        let frames = durations.total();
        let up = length_regulate(g, ldv.h, &durations, frames)?;
        let pe = g.input(positional_encoding(frames, self.cfg.hidden));
        let mut x = g.add(up, pe);
        for b in &self.ld_decoder {
            x = b.forward(g, x, None);
        }
        let target = match mode {
            Mode::Train(t) => {
                if g.shape(t.linguistic) != (frames, self.cfg.hidden) {
                    return Err(Error::Input(format!(
                        "linguistic target {:?} for {frames} frames",
                        g.shape(t.linguistic)
                    )));
                }
                Some(t.linguistic)
            }
            Mode::Infer { .. } => None,
        };
        let ling = self.linguistic_adaptor.forward(g, x, target);
        let h_ld = ling.h;
        let sd = match mode {
            Mode::Train(t) => {
                self.sdg
                    .forward(g, h_ld, emb.e_s, Some((&t.sd_pitch, &t.sd_energy)))?
            }
            Mode::Infer { .. } => self.sdg.forward(g, h_ld, emb.e_s, None)?,
        };
        let ld_projection = self.proj_ld.forward(g, h_ld);
        let sd_projection = self.proj_sd.forward(g, sd.h);
        let mel = g.add(ld_projection, sd_projection);
        Ok(Synthesis {
            mel,
            ld_projection,
            sd_projection,
            h_ld,
            h_sd: sd.h,
            ldv,
            linguistic: ling.predicted,
            sd_pitch: sd.pitch,
            sd_energy: sd.energy,
            durations,
            embedded: *emb,
        })
    }

    pub fn synthesize<T: Real>(
        &self,
        g: &mut Graph<T>,
        tokens: &[usize],
        lang: usize,
        spk: usize,
        mode: Mode<'_, T>,
        mixing: Option<Mixing>,
    ) -> Result<Synthesis> {
        let emb = self.embed_text(g, tokens, lang, spk)?;
        self.generate(g, &emb, mode, mixing)
    }

    /// Sets the output bias of the LD projection, e.g. to the corpus mean
    /// log-mel frame.
    pub fn set_output_bias<T: Real>(&self, store: &mut ParamStore<T>, bias: &[f64]) -> Result<()> {
        let b = store.get_mut(self.proj_ld.b);
        if b.len() != bias.len() {
            return Err(Error::Input(format!(
                "{} bias values for {} bins",
                bias.len(),
                b.len()
            )));
        }
        for (dst, &v) in b.data_mut().iter_mut().zip(bias) {
            *dst = T::lit(v);
        }
        Ok(())
    }
}
