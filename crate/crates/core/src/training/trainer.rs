use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::losses::{ctc_loss, total_loss, LossBreakdown, LAMBDA};
use super::optim::adamw_step;
use super::TrainConfig;
use crate::align::diagonal_log_prior;
use crate::autodiff::{Gradients, Graph, ParamStore, Var};
use crate::corpus::{collate, Batch, BatchItem, Corpus, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{
    log_duration_target, random_permutation, sample_gamma, threshold_logits, Mixing, Mode, Model,
    Synthesis, TeacherForcing,
};
use crate::targets::{build_ld_targets, BinarySeq, DurationSeq, SpeakerStats};
use crate::tensor::Tensor;

/// Stream offset separating epoch shuffles from per-step draws.
const EPOCH_STREAM: u64 = 1 << 40;

/// Mutable training state; everything needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamStore<f32>,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    /// Gradient sum of the batches since the last update.
    pub accum: Vec<Tensor<f32>>,
    pub accum_batches: usize,
    /// Batches processed so far.
    pub step: u64,
    /// Optimizer updates applied so far.
    pub updates: u64,
}

impl TrainState {
    pub fn new(params: ParamStore<f32>) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            accum: zeros(),
            accum_batches: 0,
            step: 0,
            updates: 0,
            params,
        }
    }
}

/// Random draws consumed by one batch item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ItemRandomness {
    pub gamma: f64,
    /// Speaker whose statistics are mixed in.
    pub partner: usize,
    pub dropout_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Steps completed, including this one.
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    /// Batch-mean losses; `None` when a term was non-finite.
    pub losses: Option<LossBreakdown>,
    /// Why the step contributed no gradient, if it did not.
    pub skipped: Option<String>,
    pub updated: bool,
}

/// Deterministic teacher-forced evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub utterances: usize,
    pub mel_l1: f64,
    /// Fraction of tokens whose thresholded LD pitch prediction matches the
    /// target derived from the aligner's durations.
    pub ld_pitch_accuracy: f64,
    pub ld_energy_accuracy: f64,
    /// Every Viterbi duration sequence covers its frames with entries ≥ 1.
    pub durations_valid: bool,
}

struct ItemGraph {
    parts: [Var; 9],
    total: Var,
    synthesis: Synthesis,
    durations: DurationSeq,
    ld_pitch: BinarySeq,
    ld_energy: BinarySeq,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub state: TrainState,
    pub vocab: Vocabulary,
    /// Size of the training split the data order is drawn over.
    pub n_train: usize,
}

fn mean_frame(utts: &[&Utterance], cols: usize) -> Vec<f64> {
    let mut sum = vec![0.0; cols];
    let mut n = 0usize;
    for u in utts {
        for r in 0..u.mel.rows() {
            for (s, &v) in sum.iter_mut().zip(u.mel.row(r)) {
                *s += f64::from(v);
            }
            n += 1;
        }
    }
    sum.iter().map(|s| s / n.max(1) as f64).collect()
}

impl Trainer {
    /// Fresh model sized for `corpus`.
    pub fn new(mut cfg: TrainConfig, corpus: &Corpus) -> Result<Self> {
        cfg.model.vocab_size = corpus.vocab.len();
        cfg.model.n_languages = corpus.info.n_languages;
        cfg.model.n_speakers = corpus.info.n_speakers;
        cfg.model.ssl_dim = corpus.info.ssl_dim;
        cfg.validate()?;
        let train = corpus.split("train")?;
        if train.is_empty() {
            return Err(Error::Input("training split is empty".into()));
        }
        let mut params = ParamStore::new();
        let model = Model::build(&cfg.model, &mut params, cfg.seed)?;
        if cfg.init_output_bias {
            model.set_output_bias(&mut params, &mean_frame(&train, cfg.model.n_mels))?;
        }
        Ok(Self {
            n_train: train.len(),
            vocab: corpus.vocab.clone(),
            state: TrainState::new(params),
            model,
            cfg,
        })
    }

    /// Rebuilds a trainer from saved state.
    pub fn from_parts(
        cfg: TrainConfig,
        vocab: Vocabulary,
        n_train: usize,
        state: TrainState,
    ) -> Result<Self> {
        cfg.validate()?;
        let model = Model::attach(&cfg.model, &state.params)?;
        let n = state.params.len();
        if state.m.len() != n || state.v.len() != n || state.accum.len() != n {
            return Err(Error::Checkpoint(
                "optimizer state does not match the parameters".into(),
            ));
        }
        Ok(Self {
            cfg,
            model,
            state,
            vocab,
            n_train,
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.n_train.div_ceil(self.cfg.batch_size) as u64
    }

    pub fn epoch_of(&self, step: u64) -> u64 {
        step / self.batches_per_epoch()
    }

    /// Indices into the training split for batch `step`.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let epoch = self.epoch_of(step);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(EPOCH_STREAM + epoch);
        let mut order: Vec<usize> = (0..self.n_train).collect();
        order.shuffle(&mut rng);
        let b = self.cfg.batch_size;
        let start = (step % self.batches_per_epoch()) as usize * b;
        order[start..(start + b).min(self.n_train)].to_vec()
    }

    /// Draws for `step`: a batch permutation choosing mixing partners, then
    /// γ and a dropout seed per item.
    pub fn randomness(&self, step: u64, batch: &Batch) -> Vec<ItemRandomness> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step);
        let perm = random_permutation(batch.items.len(), &mut rng);
        perm.iter()
            .map(|&p| ItemRandomness {
                gamma: sample_gamma(&mut rng, true),
                partner: batch.items[p].speaker,
                dropout_seed: rng.random(),
            })
            .collect()
    }

    /// Collates the next batch from the training split and steps on it.
    pub fn train_step(&mut self, corpus: &Corpus) -> Result<StepReport> {
        let train = corpus.split("train")?;
        if train.len() != self.n_train {
            return Err(Error::Input(format!(
                "training split has {} utterances, the run was started with {}",
                train.len(),
                self.n_train
            )));
        }
        let utts: Vec<&Utterance> = self
            .batch_indices(self.state.step)
            .iter()
            .map(|&i| train[i])
            .collect();
        let batch = collate(&utts, &corpus.stats, 0, 0)?;
        let rnd = self.randomness(self.state.step, &batch);
        self.train_step_with(&batch, &rnd)
    }

    fn build_item<'g>(
        &self,
        g: &mut Graph<'g, f32>,
        item: &BatchItem,
        prior: bool,
        mixing: Option<Mixing>,
    ) -> Result<ItemGraph> {
        let m = &self.model;
        let tokens = item.valid_tokens();
        let frames = item.n_frames;
        let mel = item.valid_mel();
        let emb = m.embed_text(g, tokens, item.language, item.speaker)?;
        let log_prior =
            prior.then(|| diagonal_log_prior(frames, tokens.len(), self.cfg.prior_width));
        let al = m.aligner.forward(g, emb.tokens, &mel, log_prior)?;
        let durations = al.durations.clone();
        let (ld_pitch, ld_energy) =
            build_ld_targets(&item.valid_pitch(), item.valid_energy(), &durations)?;

        let ssl = g.input(item.valid_ssl());
        let z = m.linguistic_encoder.forward(g, ssl);
        let logits = m.text_predictor.forward(g, z);
        let (ctc, ctc_grad) = ctc_loss(&g.value(logits).cast(), tokens, m.cfg.vocab_size)?;
        let ctc = g.fused_loss(logits, ctc as f32, ctc_grad.cast());
        let linguistic_target = g.value(z).clone();
        let linguistic = g.detach(z);

        let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let teacher = TeacherForcing {
            durations: durations.clone(),
            ld_pitch: ld_pitch.clone(),
            ld_energy: ld_energy.clone(),
            linguistic,
            sd_pitch: to_f32(item.valid_sd_pitch()),
            sd_energy: to_f32(item.valid_energy()),
        };
        let syn = m.generate(g, &emb, Mode::Train(&teacher), mixing)?;

        let mel_l = g.l1_mean(syn.mel, mel, frames);
        let align = g.add(al.forward_sum, al.binarization);
        let dur_target = Tensor::column(&log_duration_target::<f32>(&durations));
        let dur = g.l1_mean(syn.ldv.log_durations, dur_target, tokens.len());
        let ldp = g.bce_logits_sum(syn.ldv.pitch_logits, &ld_pitch.as_reals::<f32>());
        let lde = g.bce_logits_sum(syn.ldv.energy_logits, &ld_energy.as_reals::<f32>());
        let lin = g.l1_mean(syn.linguistic, linguistic_target, frames);
        let sdp = g.l1_mean(syn.sd_pitch, Tensor::column(&teacher.sd_pitch), frames);
        let sde = g.l1_mean(syn.sd_energy, Tensor::column(&teacher.sd_energy), frames);

        let mut aux = dur;
        for v in [ldp, lde, lin, ctc, sdp, sde] {
            aux = g.add(aux, v);
        }
        let aux = g.scale(aux, LAMBDA as f32);
        let main = g.add(mel_l, align);
        let total = g.add(main, aux);
        Ok(ItemGraph {
            parts: [mel_l, align, dur, ldp, lde, lin, ctc, sdp, sde],
            total,
            synthesis: syn,
            durations,
            ld_pitch,
            ld_energy,
        })
    }

    fn item_gradients(
        &self,
        item: &BatchItem,
        rnd: &ItemRandomness,
    ) -> Result<([f64; 9], Gradients<f32>)> {
        let dropout = ChaCha8Rng::seed_from_u64(rnd.dropout_seed);
        let mut g = Graph::new(&self.state.params).with_dropout(self.cfg.model.dropout, dropout);
        let mixing = self.cfg.mix_statistics.then_some(Mixing {
            partner: rnd.partner,
            gamma: rnd.gamma,
        });
        let out = self.build_item(&mut g, item, self.state.step < self.cfg.prior_steps, mixing)?;
        let parts = out.parts.map(|v| f64::from(g.value(v).item()));
        Ok((parts, g.backward(out.total)))
    }

    /// One batch: forward, backward, accumulate; updates the parameters
    /// after every `accumulation` contributing batches.
    pub fn train_step_with(&mut self, batch: &Batch, rnd: &[ItemRandomness]) -> Result<StepReport> {
        if batch.items.is_empty() || rnd.len() != batch.items.len() {
            return Err(Error::Input(format!(
                "{} randomness draws for {} batch items",
                rnd.len(),
                batch.items.len()
            )));
        }
        let step = self.state.step;
        let epoch = self.epoch_of(step);
        let lr = self.cfg.optimizer.learning_rate(epoch);
        let n = batch.items.len();
        let scale = 1.0 / (n * self.cfg.optimizer.accumulation) as f32;
        let mut buf: Vec<Tensor<f32>> = self
            .state
            .params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        let mut sums = [0.0f64; 9];
        for (item, r) in batch.items.iter().zip(rnd) {
            let (parts, grads) = self.item_gradients(item, r)?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p;
            }
            grads.accumulate_into(&mut buf, scale);
        }
        self.state.step += 1;
        let mut report = StepReport {
            step: self.state.step,
            epoch,
            lr,
            losses: None,
            skipped: None,
            updated: false,
        };
        match total_loss(sums.map(|s| s / n as f64)) {
            Ok(l) => report.losses = Some(l),
            Err(e) => {
                log::warn!("step {}: {e}; skipping", report.step);
                report.skipped = Some(e.to_string());
                return Ok(report);
            }
        }
        if !buf.iter().all(Tensor::is_finite) {
            log::warn!("step {}: non-finite gradient; skipping", report.step);
            report.skipped = Some("non-finite gradient".into());
            return Ok(report);
        }
        for (a, b) in self.state.accum.iter_mut().zip(&buf) {
            a.add_assign(b);
        }
        self.state.accum_batches += 1;
        if self.state.accum_batches == self.cfg.optimizer.accumulation {
            self.state.updates += 1;
            let s = &mut self.state;
            adamw_step(
                &self.cfg.optimizer,
                lr,
                s.updates,
                s.params.tensors_mut(),
                &s.accum,
                &mut s.m,
                &mut s.v,
            );
            for a in &mut s.accum {
                a.data_mut().fill(0.0);
            }
            s.accum_batches = 0;
            report.updated = true;
        }
        Ok(report)
    }

    /// Teacher-forced pass without dropout, mixing or alignment prior.
    pub fn evaluate(&self, utts: &[&Utterance], stats: &SpeakerStats) -> Result<EvalReport> {
        let mut mel_sum = 0.0;
        let (mut pitch_hits, mut energy_hits, mut tokens) = (0usize, 0usize, 0usize);
        let mut durations_valid = true;
        for u in utts {
            let batch = collate(&[u], stats, 0, 0)?;
            let item = &batch.items[0];
            let mut g = Graph::new(&self.state.params);
            let out = self.build_item(&mut g, item, false, None)?;
            mel_sum += f64::from(g.value(out.parts[0]).item());
            let hits = |logits: Var, target: &BinarySeq| {
                threshold_logits(g.value(logits).data())
                    .0
                    .iter()
                    .zip(&target.0)
                    .filter(|(a, b)| a == b)
                    .count()
            };
            pitch_hits += hits(out.synthesis.ldv.pitch_logits, &out.ld_pitch);
            energy_hits += hits(out.synthesis.ldv.energy_logits, &out.ld_energy);
            tokens += item.n_tokens;
            durations_valid &=
                out.durations.total() == item.n_frames && out.durations.0.iter().all(|&d| d >= 1);
        }
        let n = utts.len().max(1) as f64;
        let t = tokens.max(1) as f64;
        Ok(EvalReport {
            utterances: utts.len(),
            mel_l1: mel_sum / n,
            ld_pitch_accuracy: pitch_hits as f64 / t,
            ld_energy_accuracy: energy_hits as f64 / t,
            durations_valid,
        })
    }
}
