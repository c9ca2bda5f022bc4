//! Variance predictors, the language-dependent variance adaptor and the
//! length regulator.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Init, LayerNorm, Linear};
use crate::targets::{BinarySeq, DurationSeq};
use crate::tensor::{Real, Tensor};

/// Two `conv → ReLU → LN → dropout` stages followed by a linear head.
#[derive(Clone, Debug)]
pub struct VariancePredictor {
    pub conv1: Conv1d,
    pub norm1: LayerNorm,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
    pub head: Linear,
}

impl VariancePredictor {
    pub fn new<T: Real>(
        init: &mut Init<T>,
        name: &str,
        input: usize,
        filters: usize,
        kernel: usize,
        output: usize,
    ) -> Self {
        Self {
            conv1: Conv1d::new(init, &format!("{name}.conv1"), input, filters, kernel),
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), filters),
            conv2: Conv1d::new(init, &format!("{name}.conv2"), filters, filters, kernel),
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), filters),
            head: Linear::new(init, &format!("{name}.head"), filters, output),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, h: Var) -> Var {
        let x = self.conv1.forward(g, h);
        let x = g.relu(x);
        let x = self.norm1.forward(g, x);
        let x = g.dropout(x);
        let x = self.conv2.forward(g, x);
        let x = g.relu(x);
        let x = self.norm2.forward(g, x);
        let x = g.dropout(x);
        self.head.forward(g, x)
    }
}

/// Frame counts from log-domain predictions: `max(1, round(exp(x) − 1))`.
pub fn durations_from_log<T: Real>(log_d: &[T]) -> DurationSeq {
    DurationSeq(
        log_d
            .iter()
            .map(|&x| {
                let d = (x.to_f64().unwrap_or(0.0).min(20.0).exp() - 1.0).round();
                if d.is_finite() && d >= 1.0 {
                    d as usize
                } else {
                    1
                }
            })
            .collect(),
    )
}

/// Training target for the duration head.
pub fn log_duration_target<T: Real>(d: &DurationSeq) -> Vec<T> {
    d.0.iter().map(|&n| T::lit((n as f64 + 1.0).ln())).collect()
}

/// Sigmoid ≥ 0.5, i.e. logit ≥ 0.
pub fn threshold_logits<T: Real>(logits: &[T]) -> BinarySeq {
    BinarySeq(logits.iter().map(|&x| u8::from(x >= T::zero())).collect())
}

/// Repeats row `i` of `h` `d[i]` times.
pub fn length_regulate<T: Real>(
    g: &mut Graph<T>,
    h: Var,
    d: &DurationSeq,
    frames: usize,
) -> Result<Var> {
    let (rows, _) = g.shape(h);
    if d.len() != rows {
        return Err(Error::Input(format!(
            "{} durations for {rows} tokens",
            d.len()
        )));
    }
    if d.total() != frames {
        return Err(Error::Input(format!(
            "durations sum to {} but {frames} frames are expected",
            d.total()
        )));
    }
    Ok(g.gather(h, &d.frame_tokens()))
}

#[derive(Clone, Debug)]
pub struct LdvAdaptor {
    pub duration: VariancePredictor,
    pub pitch: VariancePredictor,
    pub energy: VariancePredictor,
    pub pitch_embed: Conv1d,
    pub energy_embed: Conv1d,
}

/// Outputs of the language-dependent variance adaptor (token level).
#[derive(Clone, Debug)]
pub struct LdvOut {
    pub h: Var,
    pub log_durations: Var,
    pub pitch_logits: Var,
    pub energy_logits: Var,
    /// Binary values that were embedded: targets or thresholded predictions.
    pub pitch: BinarySeq,
    pub energy: BinarySeq,
}

impl LdvAdaptor {
    pub fn new<T: Real>(
        init: &mut Init<T>,
        name: &str,
        dim: usize,
        kernel: usize,
        embed_kernel: usize,
    ) -> Self {
        let vp = |init: &mut Init<T>, n: &str| {
            VariancePredictor::new(init, &format!("{name}.{n}"), dim, dim, kernel, 1)
        };
        Self {
            duration: vp(init, "duration"),
            pitch: vp(init, "pitch"),
            energy: vp(init, "energy"),
            pitch_embed: Conv1d::new(init, &format!("{name}.pitch_embed"), 1, dim, embed_kernel),
            energy_embed: Conv1d::new(init, &format!("{name}.energy_embed"), 1, dim, embed_kernel),
        }
    }

    /// `teacher` carries the binary targets in training mode.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        h: Var,
        teacher: Option<(&BinarySeq, &BinarySeq)>,
    ) -> Result<LdvOut> {
        let (rows, _) = g.shape(h);
        let log_durations = self.duration.forward(g, h);
        let pitch_logits = self.pitch.forward(g, h);
        let energy_logits = self.energy.forward(g, h);
        let (pitch, energy) = match teacher {
            Some((p, e)) => {
                if p.0.len() != rows || e.0.len() != rows {
                    return Err(Error::Input(format!(
                        "binary targets of length {}/{} for {rows} tokens",
                        p.0.len(),
                        e.0.len()
                    )));
                }
                (p.clone(), e.clone())
            }
            None => (
                threshold_logits(g.value(pitch_logits).data()),
                threshold_logits(g.value(energy_logits).data()),
            ),
        };
        let h = self.add_embedding(g, h, &self.pitch_embed, &pitch);
        let h = self.add_embedding(g, h, &self.energy_embed, &energy);
        Ok(LdvOut {
            h,
            log_durations,
            pitch_logits,
            energy_logits,
            pitch,
            energy,
        })
    }

    fn add_embedding<T: Real>(
        &self,
        g: &mut Graph<T>,
        h: Var,
        conv: &Conv1d,
        b: &BinarySeq,
    ) -> Var {
        let x = g.input(Tensor::column(&b.as_reals::<T>()));
        let e = conv.forward(g, x);
        g.add(h, e)
    }
}
