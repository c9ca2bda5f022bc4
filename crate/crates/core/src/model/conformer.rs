//! Pre-norm macaron conformer block with a single attention head.

use crate::autodiff::{Graph, Var};
use crate::nn::{Init, LayerNorm, Linear};
use crate::tensor::Real;

use super::norm::SpeakerNorm;

/// Speaker conditioning consumed by DSLN and MDSLN tails.
#[derive(Clone, Copy, Debug)]
pub struct SpeakerCond {
    pub e_s: Var,
    /// Batch-shuffled partner embedding and mixing coefficient.
    pub mix: Option<(Var, f64)>,
}

#[derive(Clone, Debug)]
pub enum Tail {
    LayerNorm(LayerNorm),
    Dsln(SpeakerNorm),
    Mdsln(SpeakerNorm),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailKind {
    LayerNorm,
    Dsln,
    Mdsln,
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new<T: Real>(init: &mut Init<T>, name: &str, dim: usize, mult: usize) -> Self {
        Self {
            norm: LayerNorm::new(init, &format!("{name}.norm"), dim),
            up: Linear::new(init, &format!("{name}.up"), dim, dim * mult),
            down: Linear::new(init, &format!("{name}.down"), dim * mult, dim),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let h = self.norm.forward(g, x);
        let h = self.up.forward(g, h);
        let h = g.swish(h);
        let h = g.dropout(h);
        let h = self.down.forward(g, h);
        g.dropout(h)
    }
}

#[derive(Clone, Debug)]
pub struct ConformerBlock {
    dim: usize,
    ff1: FeedForward,
    attn_norm: LayerNorm,
    qkv: Linear,
    attn_out: Linear,
    conv_norm: LayerNorm,
    pointwise_in: Linear,
    depthwise: crate::autodiff::ParamId,
    depthwise_bias: crate::autodiff::ParamId,
    conv_inner_norm: LayerNorm,
    pointwise_out: Linear,
    ff2: FeedForward,
    pub tail: Tail,
}

pub struct BlockConfig {
    pub dim: usize,
    pub ff_mult: usize,
    pub conv_kernel: usize,
    pub norm_kernel: usize,
    pub tail: TailKind,
}

impl ConformerBlock {
    pub fn new<T: Real>(init: &mut Init<T>, name: &str, cfg: &BlockConfig) -> Self {
        let d = cfg.dim;
        let depth_bound = (3.0 / cfg.conv_kernel as f64).sqrt();
        let tail_name = format!("{name}.tail");
        let tail = match cfg.tail {
            TailKind::LayerNorm => Tail::LayerNorm(LayerNorm::new(init, &tail_name, d)),
            TailKind::Dsln => Tail::Dsln(SpeakerNorm::new(init, &tail_name, d, cfg.norm_kernel)),
            TailKind::Mdsln => Tail::Mdsln(SpeakerNorm::new(init, &tail_name, d, cfg.norm_kernel)),
        };
        Self {
            dim: d,
            ff1: FeedForward::new(init, &format!("{name}.ff1"), d, cfg.ff_mult),
            attn_norm: LayerNorm::new(init, &format!("{name}.attn.norm"), d),
            qkv: Linear::new(init, &format!("{name}.attn.qkv"), d, 3 * d),
            attn_out: Linear::new(init, &format!("{name}.attn.out"), d, d),
            conv_norm: LayerNorm::new(init, &format!("{name}.conv.norm"), d),
            pointwise_in: Linear::new(init, &format!("{name}.conv.pw_in"), d, 2 * d),
            depthwise: init.uniform(
                &format!("{name}.conv.dw.w"),
                cfg.conv_kernel,
                d,
                depth_bound,
            ),
            depthwise_bias: init.constant(&format!("{name}.conv.dw.b"), 1, d, 0.0),
            conv_inner_norm: LayerNorm::new(init, &format!("{name}.conv.inner_norm"), d),
            pointwise_out: Linear::new(init, &format!("{name}.conv.pw_out"), d, d),
            ff2: FeedForward::new(init, &format!("{name}.ff2"), d, cfg.ff_mult),
            tail,
        }
    }

    /// Row-stochastic attention weights (`N × N`) and the attended values.
    pub fn self_attention<T: Real>(&self, g: &mut Graph<T>, x: Var) -> (Var, Var) {
        let d = self.dim;
        let h = self.attn_norm.forward(g, x);
        let qkv = self.qkv.forward(g, h);
        let q = g.slice_cols(qkv, 0, d);
        let k = g.slice_cols(qkv, d, d);
        let v = g.slice_cols(qkv, 2 * d, d);
        let scores = g.matmul_nt(q, k);
        let scores = g.scale(scores, T::lit(1.0 / (d as f64).sqrt()));
        let probs = g.softmax(scores, None);
        let ctx = g.matmul(probs, v);
        let out = self.attn_out.forward(g, ctx);
        (probs, g.dropout(out))
    }

    fn conv_module<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let d = self.dim;
        let h = self.conv_norm.forward(g, x);
        let h = self.pointwise_in.forward(g, h);
        let h = glu(g, h, d);
        let w = g.param(self.depthwise);
        let h = g.depthwise_conv(h, w);
        let b = g.param(self.depthwise_bias);
        let h = g.add_row(h, b);
        let h = self.conv_inner_norm.forward(g, h);
        let h = g.swish(h);
        let h = self.pointwise_out.forward(g, h);
        g.dropout(h)
    }

    /// `cond` is required for speaker-conditioned tails.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var, cond: Option<SpeakerCond>) -> Var {
        let half = T::lit(0.5);
        let f = self.ff1.forward(g, x);
        let f = g.scale(f, half);
        let x = g.add(x, f);
        let (_, a) = self.self_attention(g, x);
        let x = g.add(x, a);
        let c = self.conv_module(g, x);
        let x = g.add(x, c);
        let f = self.ff2.forward(g, x);
        let f = g.scale(f, half);
        let x = g.add(x, f);
        match &self.tail {
            Tail::LayerNorm(ln) => ln.forward(g, x),
            Tail::Dsln(sn) => {
                let cond = cond.expect("DSLN tail needs a speaker embedding");
                sn.dsln(g, x, cond.e_s)
            }
            Tail::Mdsln(sn) => {
                let cond = cond.expect("MDSLN tail needs a speaker embedding");
                match cond.mix {
                    Some((partner, gamma)) => sn.mdsln(g, x, cond.e_s, partner, gamma),
                    None => sn.dsln(g, x, cond.e_s),
                }
            }
        }
    }
}

/// Gated linear unit over the channel axis: `a ⊙ σ(b)` for `x = [a | b]`.
pub fn glu<T: Real>(g: &mut Graph<T>, x: Var, half: usize) -> Var {
    let a = g.slice_cols(x, 0, half);
    let b = g.slice_cols(x, half, half);
    let gate = g.sigmoid(b);
    g.mul(a, gate)
}
