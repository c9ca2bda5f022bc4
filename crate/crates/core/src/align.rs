//! Online text-to-mel aligner.
//!
//! A soft alignment `A[t, i] = softmax_i(−‖q_t − k_i‖²)` is learned from
//! projected mel frames (queries) and token embeddings (keys). Training
//! marginalizes over every monotonic path (forward-sum) and pulls `A`
//! toward the most probable path, whose run lengths are the durations.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Init};
use crate::targets::DurationSeq;
use crate::tensor::{Real, Tensor};

/// Final-layer init bound: keeps initial distances of order one so the
/// first alignments are soft.
const OUTPUT_BOUND: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct Aligner {
    pub key1: Conv1d,
    pub key2: Conv1d,
    pub query1: Conv1d,
    pub query2: Conv1d,
    pub query3: Conv1d,
}

/// Aligner graph outputs for one utterance.
#[derive(Clone, Debug)]
pub struct AlignOut {
    /// `T × L` log soft alignment.
    pub log_a: Var,
    pub forward_sum: Var,
    pub binarization: Var,
    pub durations: DurationSeq,
}

impl Aligner {
    pub fn new<T: Real>(init: &mut Init<T>, name: &str, dim: usize, n_mels: usize) -> Self {
        Self {
            key1: Conv1d::new(init, &format!("{name}.key1"), dim, dim, 3),
            key2: Conv1d::with_bound(init, &format!("{name}.key2"), dim, dim, 1, OUTPUT_BOUND),
            query1: Conv1d::new(init, &format!("{name}.query1"), n_mels, dim, 3),
            query2: Conv1d::new(init, &format!("{name}.query2"), dim, dim, 1),
            query3: Conv1d::with_bound(init, &format!("{name}.query3"), dim, dim, 1, OUTPUT_BOUND),
        }
    }

    pub fn keys<T: Real>(&self, g: &mut Graph<T>, tokens: Var) -> Var {
        let k = self.key1.forward(g, tokens);
        let k = g.relu(k);
        self.key2.forward(g, k)
    }

    /// `mel` is standardized per utterance before projection.
    pub fn queries<T: Real>(&self, g: &mut Graph<T>, mel: &Tensor<T>) -> Var {
        let x = g.input(standardize(mel));
        let q = self.query1.forward(g, x);
        let q = g.relu(q);
        let q = self.query2.forward(g, q);
        let q = g.relu(q);
        self.query3.forward(g, q)
    }

    /// Log soft alignment, optionally biased by a log prior.
    pub fn log_alignment<T: Real>(
        &self,
        g: &mut Graph<T>,
        tokens: Var,
        mel: &Tensor<T>,
        log_prior: Option<Tensor<T>>,
    ) -> Var {
        let k = self.keys(g, tokens);
        let q = self.queries(g, mel);
        let mut e = g.neg_sq_dist(q, k);
        if let Some(p) = log_prior {
            let p = g.input(p);
            e = g.add(e, p);
        }
        g.log_softmax(e)
    }

    /// Alignment losses and hard durations for one utterance.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        tokens: Var,
        mel: &Tensor<T>,
        log_prior: Option<Tensor<T>>,
    ) -> Result<AlignOut> {
        let log_a = self.log_alignment(g, tokens, mel, log_prior);
        let la = g.value(log_a).cast::<f64>();
        let (fs, fs_grad) = forward_sum_log(&la)?;
        let durations = viterbi_log(&la)?;
        let (bin, bin_grad) = binarization_log(&la, &durations)?;
        let forward_sum = g.fused_loss(log_a, T::lit(fs), fs_grad.cast());
        let binarization = g.fused_loss(log_a, T::lit(bin), bin_grad.cast());
        Ok(AlignOut {
            log_a,
            forward_sum,
            binarization,
            durations,
        })
    }
}

fn standardize<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.len().max(1) as f64;
    let mean = x.data().iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / n;
    let var = x
        .data()
        .iter()
        .map(|v| (v.to_f64().unwrap() - mean).powi(2))
        .sum::<f64>()
        / n;
    let inv = 1.0 / var.sqrt().max(1e-5);
    x.map(|v| T::lit((v.to_f64().unwrap() - mean) * inv))
}

/// Gaussian band around the diagonal, in the log domain. `width` is the
/// standard deviation as a fraction of the frame count.
pub fn diagonal_log_prior<T: Real>(frames: usize, tokens: usize, width: f64) -> Tensor<T> {
    let sigma = (width * frames as f64).max(1e-3);
    let per_token = frames as f64 / tokens as f64;
    Tensor::from_fn(frames, tokens, |t, i| {
        let dist = (t as f64 + 0.5) - (i as f64 + 0.5) * per_token;
        T::lit(-dist * dist / (2.0 * sigma * sigma))
    })
}

/// Row-wise `softmax(−‖q_t − k_i‖²)` for already projected vectors.
pub fn soft_alignment(keys: &Tensor<f64>, queries: &Tensor<f64>) -> Result<Tensor<f64>> {
    if keys.is_empty() || queries.is_empty() || keys.cols() != queries.cols() {
        return Err(Error::Input(format!(
            "keys {:?} and queries {:?} must be non-empty with equal width",
            keys.shape(),
            queries.shape()
        )));
    }
    let (t_len, l_len) = (queries.rows(), keys.rows());
    let mut out = Tensor::zeros(t_len, l_len);
    for t in 0..t_len {
        let e: Vec<f64> = (0..l_len)
            .map(|i| {
                -queries
                    .row(t)
                    .iter()
                    .zip(keys.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect();
        let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = e.iter().map(|v| (v - m).exp()).sum();
        for (i, v) in e.iter().enumerate() {
            out.set(t, i, (v - m).exp() / z);
        }
    }
    Ok(out)
}

fn check_feasible(frames: usize, tokens: usize) -> Result<()> {
    if tokens == 0 || frames < tokens {
        return Err(Error::InfeasibleAlignment { frames, tokens });
    }
    Ok(())
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `−log Σ_paths Π_t A[t, path(t)] / T` over monotonic paths that start at
/// the first token, end at the last, and advance by at most one token per
/// frame.
pub fn forward_sum_loss(a: &Tensor<f64>) -> Result<f64> {
    Ok(forward_sum_log(&a.map(f64::ln))?.0)
}

/// Forward-sum loss from `log A`, with its gradient with respect to `log A`.
pub fn forward_sum_log(log_a: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
    let (t_len, l_len) = log_a.shape();
    check_feasible(t_len, l_len)?;
    let ninf = f64::NEG_INFINITY;
    let mut alpha = Tensor::full(t_len, l_len, ninf);
    alpha.set(0, 0, log_a.get(0, 0));
    for t in 1..t_len {
        for i in 0..l_len.min(t + 1) {
            let stay = alpha.get(t - 1, i);
            let advance = if i > 0 { alpha.get(t - 1, i - 1) } else { ninf };
            alpha.set(t, i, logaddexp(stay, advance) + log_a.get(t, i));
        }
    }
    let mut beta = Tensor::full(t_len, l_len, ninf);
    beta.set(t_len - 1, l_len - 1, 0.0);
    for t in (0..t_len - 1).rev() {
        for i in 0..l_len {
            let stay = beta.get(t + 1, i) + log_a.get(t + 1, i);
            let advance = if i + 1 < l_len {
                beta.get(t + 1, i + 1) + log_a.get(t + 1, i + 1)
            } else {
                ninf
            };
            beta.set(t, i, logaddexp(stay, advance));
        }
    }
    let log_z = alpha.get(t_len - 1, l_len - 1);
    if !log_z.is_finite() {
        return Err(Error::NonFinite("forward-sum alignment probability"));
    }
    let scale = 1.0 / t_len as f64;
    let grad = Tensor::from_fn(t_len, l_len, |t, i| {
        let post = alpha.get(t, i) + beta.get(t, i) - log_z;
        -post.exp() * scale
    });
    Ok((-log_z * scale, grad))
}

/// Most probable monotonic path as per-token frame counts (each ≥ 1).
pub fn viterbi_durations(a: &Tensor<f64>) -> Result<DurationSeq> {
    viterbi_log(&a.map(f64::ln))
}

pub fn viterbi_log(log_a: &Tensor<f64>) -> Result<DurationSeq> {
    let (t_len, l_len) = log_a.shape();
    check_feasible(t_len, l_len)?;
    let ninf = f64::NEG_INFINITY;
    let mut score = Tensor::full(t_len, l_len, ninf);
    // true where the best predecessor of (t, i) is (t − 1, i − 1)
    let mut advanced = vec![false; t_len * l_len];
    score.set(0, 0, log_a.get(0, 0));
    for t in 1..t_len {
        // token i is reachable at frame t and can still finish by T − 1
        let lo = (l_len + t).saturating_sub(t_len);
        for i in lo..l_len.min(t + 1) {
            let stay = score.get(t - 1, i);
            let advance = if i > 0 { score.get(t - 1, i - 1) } else { ninf };
            let take = i > 0 && (advance > stay || stay == ninf);
            advanced[t * l_len + i] = take;
            score.set(t, i, if take { advance } else { stay } + log_a.get(t, i));
        }
    }
    let mut d = vec![0usize; l_len];
    let mut i = l_len - 1;
    for t in (0..t_len).rev() {
        d[i] += 1;
        if t > 0 && advanced[t * l_len + i] {
            i -= 1;
        }
    }
    debug_assert_eq!(i, 0);
    Ok(DurationSeq(d))
}

/// `−(1/T) Σ_t log A[t, token(t)]` along a hard path.
pub fn binarization_loss(a: &Tensor<f64>, hard: &DurationSeq) -> Result<f64> {
    Ok(binarization_log(&a.map(f64::ln), hard)?.0)
}

pub fn binarization_log(log_a: &Tensor<f64>, hard: &DurationSeq) -> Result<(f64, Tensor<f64>)> {
    let (t_len, l_len) = log_a.shape();
    hard.check_total(t_len)?;
    if hard.len() != l_len {
        return Err(Error::Input(format!(
            "{} durations for {l_len} tokens",
            hard.len()
        )));
    }
    let scale = 1.0 / t_len as f64;
    let mut grad = Tensor::zeros(t_len, l_len);
    let mut sum = 0.0;
    for (t, i) in hard.frame_tokens().into_iter().enumerate() {
        sum += log_a.get(t, i);
        grad.set(t, i, -scale);
    }
    Ok((-sum * scale, grad))
}
