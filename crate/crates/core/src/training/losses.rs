//! Loss functions and the weighted objective.

use crate::autodiff::{log_sum_exp, softplus, PROB_CLAMP};
use crate::error::{Error, Result};
use crate::targets::BinarySeq;
use crate::tensor::Tensor;

/// Weight shared by every auxiliary term.
pub const LAMBDA: f64 = 0.1;

/// Loss reported for CTC instances too short for their target.
pub const CTC_INFEASIBLE_LOSS: f64 = 1e3;

/// Summed binary cross-entropy of `sigmoid(logits)` against `target`, with
/// log-probabilities floored at `ln 1e-7`.
pub fn bce_binary_loss(logits: &[f64], target: &BinarySeq) -> Result<f64> {
    if logits.len() != target.0.len() {
        return Err(Error::Input(format!(
            "{} logits for {} binary targets",
            logits.len(),
            target.0.len()
        )));
    }
    let floor = PROB_CLAMP.ln();
    Ok(logits
        .iter()
        .zip(&target.0)
        .map(|(&x, &t)| {
            if t == 1 {
                -(-softplus(-x)).max(floor)
            } else {
                -(-softplus(x)).max(floor)
            }
        })
        .sum())
}

/// Mean absolute error over the first `valid_rows` rows.
pub fn l1_loss(pred: &Tensor<f64>, target: &Tensor<f64>, valid_rows: usize) -> Result<f64> {
    if pred.cols() != target.cols() || valid_rows > pred.rows() || valid_rows > target.rows() {
        return Err(Error::Input(format!(
            "L1 between {:?} and {:?} over {valid_rows} rows",
            pred.shape(),
            target.shape()
        )));
    }
    let c = pred.cols();
    let sum: f64 = (0..valid_rows)
        .flat_map(|r| {
            pred.row(r)
                .iter()
                .zip(target.row(r))
                .map(|(a, b)| (a - b).abs())
        })
        .sum();
    Ok(sum / (valid_rows * c).max(1) as f64)
}

/// Frames needed to emit `target`: one per label plus a blank between
/// repeated labels.
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// `−log P(target | logits)` under CTC with `blank`, and its gradient with
/// respect to the logits. Per-frame log-probabilities are floored at
/// `ln 1e-7`. Infeasible lengths give [`CTC_INFEASIBLE_LOSS`] and a zero
/// gradient.
pub fn ctc_loss(
    logits: &Tensor<f64>,
    target: &[usize],
    blank: usize,
) -> Result<(f64, Tensor<f64>)> {
    let (t_len, classes) = logits.shape();
    if blank >= classes {
        return Err(Error::Input(format!(
            "blank {blank} outside {classes} classes"
        )));
    }
    if let Some(&bad) = target.iter().find(|&&k| k >= classes || k == blank) {
        return Err(Error::Input(format!("CTC target label {bad} is invalid")));
    }
    if target.is_empty() || t_len < ctc_min_frames(target) {
        log::warn!(
            "CTC target of {} labels cannot fit {t_len} frames; using the sentinel loss",
            target.len()
        );
        return Ok((CTC_INFEASIBLE_LOSS, Tensor::zeros(t_len, classes)));
    }
    let floor = PROB_CLAMP.ln();
    let mut lp = Tensor::zeros(t_len, classes);
    let mut probs = Tensor::zeros(t_len, classes);
    for t in 0..t_len {
        let z = log_sum_exp(logits.row(t));
        for k in 0..classes {
            let raw = logits.get(t, k) - z;
            probs.set(t, k, raw.exp());
            lp.set(t, k, raw.max(floor));
        }
    }
    // extended labels: blank, y1, blank, y2, ..., blank
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(target.iter().flat_map(|&y| [y, blank]))
        .collect();
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let lae = |a: f64, b: f64| log_sum_exp(&[a, b]);
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let mut alpha = Tensor::full(t_len, s_len, ninf);
    alpha.set(0, 0, lp.get(0, blank));
    alpha.set(0, 1, lp.get(0, ext[1]));
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha.get(t - 1, s);
            if s >= 1 {
                a = lae(a, alpha.get(t - 1, s - 1));
            }
            if skip_ok(s) {
                a = lae(a, alpha.get(t - 1, s - 2));
            }
            alpha.set(t, s, a + lp.get(t, ext[s]));
        }
    }
    let mut beta = Tensor::full(t_len, s_len, ninf);
    beta.set(t_len - 1, s_len - 1, 0.0);
    beta.set(t_len - 1, s_len - 2, 0.0);
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta.get(t + 1, s2) + lp.get(t + 1, ext[s2]);
            let mut b = next(s);
            if s + 1 < s_len {
                b = lae(b, next(s + 1));
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = lae(b, next(s + 2));
            }
            beta.set(t, s, b);
        }
    }
    let log_p = lae(
        alpha.get(t_len - 1, s_len - 1),
        alpha.get(t_len - 1, s_len - 2),
    );
    // occupancy γ[t, k] = P(frame t emits k | target)
    let mut occ = Tensor::zeros(t_len, classes);
    for t in 0..t_len {
        for s in 0..s_len {
            let v = (alpha.get(t, s) + beta.get(t, s) - log_p).exp();
            let k = ext[s];
            occ.set(t, k, occ.get(t, k) + v);
        }
    }
    let mut grad = Tensor::zeros(t_len, classes);
    for t in 0..t_len {
        let live: f64 = (0..classes)
            .filter(|&k| lp.get(t, k) > floor)
            .map(|k| occ.get(t, k))
            .sum();
        for j in 0..classes {
            let own = if lp.get(t, j) > floor {
                occ.get(t, j)
            } else {
                0.0
            };
            grad.set(t, j, probs.get(t, j) * live - own);
        }
    }
    Ok((-log_p, grad))
}

/// Per-term losses and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub mel: f64,
    pub align: f64,
    pub dur: f64,
    pub ldp: f64,
    pub lde: f64,
    pub lin: f64,
    pub ctc: f64,
    pub sdp: f64,
    pub sde: f64,
    pub total: f64,
}

pub const TERMS: [&str; 9] = [
    "mel", "align", "dur", "ldp", "lde", "lin", "ctc", "sdp", "sde",
];

impl LossBreakdown {
    pub fn parts(&self) -> [f64; 9] {
        [
            self.mel, self.align, self.dur, self.ldp, self.lde, self.lin, self.ctc, self.sdp,
            self.sde,
        ]
    }
}

/// `mel + align + λ·(dur + ldp + lde + lin + ctc + sdp + sde)`.
pub fn weighted_total(p: &[f64; 9]) -> f64 {
    p[0] + p[1] + LAMBDA * (p[2] + p[3] + p[4] + p[5] + p[6] + p[7] + p[8])
}

/// Assembles the breakdown; any non-finite part aborts with its name.
pub fn total_loss(parts: [f64; 9]) -> Result<LossBreakdown> {
    if let Some(i) = parts.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(TERMS[i]));
    }
    let [mel, align, dur, ldp, lde, lin, ctc, sdp, sde] = parts;
    Ok(LossBreakdown {
        mel,
        align,
        dur,
        ldp,
        lde,
        lin,
        ctc,
        sdp,
        sde,
        total: weighted_total(&parts),
    })
}
