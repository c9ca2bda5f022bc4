//! Linguistic encoder, text predictor and linguistic adaptor.

use crate::autodiff::{Graph, Var};
use crate::nn::{positional_encoding, Conv1d, Init, LayerNorm, Linear};
use crate::tensor::{Real, Tensor};

use super::conformer::{glu, BlockConfig, ConformerBlock, TailKind};
use super::variance::VariancePredictor;

/// `ssl → linear → ConvGLU (residual) → LN`.
#[derive(Clone, Debug)]
pub struct LinguisticEncoder {
    pub input: Linear,
    pub glu_conv: Conv1d,
    pub norm: LayerNorm,
    dim: usize,
}

impl LinguisticEncoder {
    pub fn new<T: Real>(
        init: &mut Init<T>,
        name: &str,
        ssl_dim: usize,
        dim: usize,
        kernel: usize,
    ) -> Self {
        Self {
            input: Linear::new(init, &format!("{name}.input"), ssl_dim, dim),
            glu_conv: Conv1d::new(init, &format!("{name}.glu_conv"), dim, 2 * dim, kernel),
            norm: LayerNorm::new(init, &format!("{name}.norm"), dim),
            dim,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ssl: Var) -> Var {
        let x = self.input.forward(g, ssl);
        let c = self.glu_conv.forward(g, x);
        let c = glu(g, c, self.dim);
        let c = g.dropout(c);
        let x = g.add(x, c);
        self.norm.forward(g, x)
    }

    /// Convenience for target building outside a training graph.
    pub fn encode<T: Real>(
        &self,
        store: &crate::autodiff::ParamStore<T>,
        ssl: &Tensor<T>,
    ) -> Tensor<T> {
        let mut g = Graph::new(store);
        let x = g.input(ssl.clone());
        let out = self.forward(&mut g, x);
        g.value(out).clone()
    }
}

/// Conformer stack over linguistic features with a projection to
/// `vocab + 1` classes; the last class is the CTC blank.
#[derive(Clone, Debug)]
pub struct TextPredictor {
    pub blocks: Vec<ConformerBlock>,
    pub head: Linear,
}

impl TextPredictor {
    pub fn new<T: Real>(
        init: &mut Init<T>,
        name: &str,
        cfg: &BlockConfig,
        blocks: usize,
        vocab: usize,
    ) -> Self {
        let cfg = BlockConfig {
            tail: TailKind::LayerNorm,
            ..*cfg
        };
        Self {
            blocks: (0..blocks)
                .map(|i| ConformerBlock::new(init, &format!("{name}.block{i}"), &cfg))
                .collect(),
            head: Linear::new(init, &format!("{name}.head"), cfg.dim, vocab + 1),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, z: Var) -> Var {
        let (n, d) = g.shape(z);
        let pe = g.input(positional_encoding(n, d));
        let mut x = g.add(z, pe);
        for b in &self.blocks {
            x = b.forward(g, x, None);
        }
        self.head.forward(g, x)
    }
}

/// Predicts linguistic features from the LD decoder output and adds a
/// convolutional embedding of the target (training) or prediction.
#[derive(Clone, Debug)]
pub struct LinguisticAdaptor {
    pub predictor: VariancePredictor,
    pub embed: Conv1d,
}

#[derive(Clone, Copy, Debug)]
pub struct LinguisticOut {
    pub h: Var,
    pub predicted: Var,
}

impl LinguisticAdaptor {
    pub fn new<T: Real>(
        init: &mut Init<T>,
        name: &str,
        dim: usize,
        kernel: usize,
        embed_kernel: usize,
    ) -> Self {
        Self {
            predictor: VariancePredictor::new(
                init,
                &format!("{name}.predictor"),
                dim,
                dim,
                kernel,
                dim,
            ),
            embed: Conv1d::new(init, &format!("{name}.embed"), dim, dim, embed_kernel),
        }
    }

    /// `target` must have as many rows as `h_dec`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        h_dec: Var,
        target: Option<Var>,
    ) -> LinguisticOut {
        let predicted = self.predictor.forward(g, h_dec);
        let source = target.unwrap_or(predicted);
        let e = self.embed.forward(g, source);
        LinguisticOut {
            h: g.add(h_dec, e),
            predicted,
        }
    }
}
