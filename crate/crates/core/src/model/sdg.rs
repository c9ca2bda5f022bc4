//! Speaker-dependent generator: SD encoder, SDV adaptor and SD decoder.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Init};
use crate::tensor::{Real, Tensor};

use super::conformer::{BlockConfig, ConformerBlock, SpeakerCond, TailKind};
use super::variance::VariancePredictor;

#[derive(Clone, Debug)]
pub struct SdGenerator {
    pub encoder: Vec<ConformerBlock>,
    pub pitch: VariancePredictor,
    pub energy: VariancePredictor,
    pub pitch_embed: Conv1d,
    pub energy_embed: Conv1d,
    pub decoder: Vec<ConformerBlock>,
}

#[derive(Clone, Copy, Debug)]
pub struct SdOut {
    pub h: Var,
    pub pitch: Var,
    pub energy: Var,
}

pub struct SdSizes {
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub predictor_kernel: usize,
    pub embed_kernel: usize,
}

impl SdGenerator {
    pub fn new<T: Real>(
        init: &mut Init<T>,
        name: &str,
        block: &BlockConfig,
        sizes: &SdSizes,
    ) -> Self {
        let enc_cfg = BlockConfig {
            tail: TailKind::Dsln,
            ..*block
        };
        let dec_cfg = BlockConfig {
            tail: TailKind::LayerNorm,
            ..*block
        };
        let d = block.dim;
        let vp = |init: &mut Init<T>, n: &str| {
            VariancePredictor::new(
                init,
                &format!("{name}.{n}"),
                d,
                d,
                sizes.predictor_kernel,
                1,
            )
        };
        Self {
            encoder: (0..sizes.encoder_blocks)
                .map(|i| ConformerBlock::new(init, &format!("{name}.encoder{i}"), &enc_cfg))
                .collect(),
            pitch: vp(init, "pitch"),
            energy: vp(init, "energy"),
            pitch_embed: Conv1d::new(
                init,
                &format!("{name}.pitch_embed"),
                1,
                d,
                sizes.embed_kernel,
            ),
            energy_embed: Conv1d::new(
                init,
                &format!("{name}.energy_embed"),
                1,
                d,
                sizes.embed_kernel,
            ),
            decoder: (0..sizes.decoder_blocks)
                .map(|i| ConformerBlock::new(init, &format!("{name}.decoder{i}"), &dec_cfg))
                .collect(),
        }
    }

    /// `teacher` holds frame-level standardized pitch and energy targets.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        h_ld: Var,
        e_s: Var,
        teacher: Option<(&[T], &[T])>,
    ) -> Result<SdOut> {
        let (frames, _) = g.shape(h_ld);
        let cond = SpeakerCond { e_s, mix: None };
        let mut x = h_ld;
        for b in &self.encoder {
            x = b.forward(g, x, Some(cond));
        }
        let pitch = self.pitch.forward(g, x);
        let energy = self.energy.forward(g, x);
        let (p_src, e_src) = match teacher {
            Some((p, e)) => {
                if p.len() != frames || e.len() != frames {
                    return Err(Error::Input(format!(
                        "SD targets of length {}/{} for {frames} frames",
                        p.len(),
                        e.len()
                    )));
                }
                (g.input(Tensor::column(p)), g.input(Tensor::column(e)))
            }
            None => (pitch, energy),
        };
        let pe = self.pitch_embed.forward(g, p_src);
        let x = g.add(x, pe);
        let ee = self.energy_embed.forward(g, e_src);
        let mut x = g.add(x, ee);
        for b in &self.decoder {
            x = b.forward(g, x, None);
        }
        Ok(SdOut {
            h: x,
            pitch,
            energy,
        })
    }
}
