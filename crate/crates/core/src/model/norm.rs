//! Speaker-conditioned layer normalization.
//!
//! DSLN normalizes each position and then applies a channel-wise 1-D
//! convolution and bias whose values are predicted from the speaker
//! embedding by single linear layers. MDSLN first mixes those predicted
//! statistics with the statistics of a batch-shuffled speaker.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, LN_EPS};
use crate::tensor::Real;

/// Beta(α, α) concentration for the mixing coefficient.
pub const MIX_ALPHA: f64 = 2.0;

/// Predicts `(W, b)` from a speaker embedding.
#[derive(Clone, Debug)]
pub struct SpeakerNorm {
    pub weight: Linear,
    pub bias: Linear,
    pub kernel: usize,
    pub dim: usize,
}

impl SpeakerNorm {
    pub fn new<T: Real>(init: &mut Init<T>, name: &str, dim: usize, kernel: usize) -> Self {
        let weight = Linear::with_bound(
            init,
            &format!("{name}.weight_pred"),
            dim,
            kernel * dim,
            0.01,
        );
        // start as a plain layer norm: centre tap 1, other taps 0
        let wb = init.store.get_mut(weight.b);
        for c in 0..dim {
            wb.set(0, (kernel / 2) * dim + c, T::one());
        }
        let bias = Linear::with_bound(init, &format!("{name}.bias_pred"), dim, dim, 0.01);
        Self {
            weight,
            bias,
            kernel,
            dim,
        }
    }

    /// Filter `W(e_s)` (`kernel × dim`) and bias `b(e_s)` (`1 × dim`).
    pub fn statistics<T: Real>(&self, g: &mut Graph<T>, e_s: Var) -> (Var, Var) {
        let w = self.weight.forward(g, e_s);
        let w = g.reshape(w, self.kernel, self.dim);
        let b = self.bias.forward(g, e_s);
        (w, b)
    }

    pub fn dsln<T: Real>(&self, g: &mut Graph<T>, h: Var, e_s: Var) -> Var {
        let (w, b) = self.statistics(g, e_s);
        apply(g, h, w, b)
    }

    pub fn mdsln<T: Real>(
        &self,
        g: &mut Graph<T>,
        h: Var,
        e_s: Var,
        e_mix: Var,
        gamma: f64,
    ) -> Var {
        let (w, b) = self.statistics(g, e_s);
        let (w_t, b_t) = self.statistics(g, e_mix);
        let (w_mix, b_mix) = mix_statistics(g, w, w_t, b, b_t, gamma);
        apply(g, h, w_mix, b_mix)
    }
}

/// `W * LN(h) + b` with a channel-wise "same" convolution.
pub fn apply<T: Real>(g: &mut Graph<T>, h: Var, w: Var, b: Var) -> Var {
    let n = g.layer_norm(h, LN_EPS);
    let c = g.depthwise_conv(n, w);
    g.add_row(c, b)
}

/// `(γW + (1−γ)W̃, γb + (1−γ)b̃)`.
pub fn mix_statistics<T: Real>(
    g: &mut Graph<T>,
    w: Var,
    w_t: Var,
    b: Var,
    b_t: Var,
    gamma: f64,
) -> (Var, Var) {
    let (keep, swap) = (T::lit(gamma), T::lit(1.0 - gamma));
    let mut mix = |a: Var, a_t: Var| {
        let x = g.scale(a, keep);
        let y = g.scale(a_t, swap);
        g.add(x, y)
    };
    (mix(w, w_t), mix(b, b_t))
}

/// Rows reordered as `out[k] = rows[perm[k]]`.
pub fn batch_shuffle<R: Clone>(rows: &[R], perm: &[usize]) -> Result<Vec<R>> {
    let mut seen = vec![false; rows.len()];
    if perm.len() != rows.len() {
        return Err(Error::Input(format!(
            "permutation of length {} for a batch of {}",
            perm.len(),
            rows.len()
        )));
    }
    for &p in perm {
        if p >= rows.len() || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Input(format!("{perm:?} is not a permutation")));
        }
    }
    Ok(perm.iter().map(|&p| rows[p].clone()).collect())
}

/// Uniform random permutation of `0..n` (identity for `n ≤ 1`).
pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// Mixing coefficient: `Beta(2, 2)` while training, 1 at inference.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, training: bool) -> f64 {
    if !training {
        return 1.0;
    }
    Beta::new(MIX_ALPHA, MIX_ALPHA)
        .expect("valid Beta parameters")
        .sample(rng)
}
