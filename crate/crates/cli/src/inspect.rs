//! Diagnostics over a sentence × speaker probe grid.
//!
//! Probe file:
//!
//! ```toml
//! speakers = [0, 1, 2, 3]
//!
//! [[sentence]]
//! text = "a e i o"
//! language = 0
//! ```
//!
//! Output bundle: `ld_s<i>_spk<k>.png` and `sd_s<i>_spk<k>.png` (the two
//! projected feature streams), `scatter_ld.tsv/.png` and
//! `scatter_mel.tsv/.png` (principal-component projections of time-pooled
//! features) and `summary.toml`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dtts::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::render;
use crate::synth::Synthesizer;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sentence {
    pub text: String,
    pub language: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probes {
    pub speakers: Vec<usize>,
    #[serde(rename = "sentence")]
    pub sentences: Vec<Sentence>,
}

impl Probes {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let p: Probes =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if p.speakers.len() < 2 || p.sentences.is_empty() {
            bail!("probes need at least two speakers and one sentence");
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub probes: usize,
    /// Between-speaker variance of time-pooled LD projections.
    pub ld_between: f64,
    /// Between-speaker variance of time-pooled SD projections.
    pub sd_between: f64,
    /// `ld_between / sd_between`.
    pub rho: f64,
    /// Mean absolute change of the LD projection when only the speaker id
    /// changes (durations held fixed).
    pub ld_swap_change: f64,
    pub sd_swap_change: f64,
    /// `sd_swap_change / ld_swap_change`.
    pub swap_ratio: f64,
}

fn time_mean(m: &Tensor<f64>) -> Vec<f64> {
    let n = m.rows().max(1) as f64;
    (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / n)
        .collect()
}

/// Mean over groups of the mean squared distance of each member to its
/// group centroid.
pub fn between_variance(groups: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for g in groups {
        let dim = g[0].len();
        let centroid: Vec<f64> = (0..dim)
            .map(|j| g.iter().map(|v| v[j]).sum::<f64>() / g.len() as f64)
            .collect();
        total += g
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&centroid)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / g.len() as f64;
    }
    total / groups.len().max(1) as f64
}

/// Projection onto the two leading principal components, with each axis
/// signed so that its largest-magnitude loading is positive.
pub fn pca2(points: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let n = points.len();
    let dim = points[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    let cov = x.transpose() * &x / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |k: usize| {
        let mut v = eig.eigenvectors.column(order[k]).into_owned();
        let lead = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if lead < 0.0 {
            v = -v;
        }
        v
    };
    let (a, b) = (axis(0), axis(1.min(dim - 1)));
    (0..n)
        .map(|i| {
            let row = x.row(i);
            (row.dot(&a.transpose()), row.dot(&b.transpose()))
        })
        .collect()
}

fn mean_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len().max(1) as f64
}

pub fn inspect(ckpt: &Path, probes: &Probes, out: &Path) -> Result<Summary> {
    let s = Synthesizer::load(ckpt)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut ld_groups = Vec::new();
    let mut sd_groups = Vec::new();
    let mut ld_points = Vec::new();
    let mut mel_points = Vec::new();
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    let (mut ld_swap, mut sd_swap) = (0.0, 0.0);
    for (i, sentence) in probes.sentences.iter().enumerate() {
        let tokens = s.vocab.encode(&sentence.text)?;
        let mut ld_group = Vec::new();
        let mut sd_group = Vec::new();
        let mut preds = Vec::new();
        for &spk in &probes.speakers {
            let p = s.predict(&tokens, sentence.language, spk, None)?;
            render::heatmap(
                &out.join(format!("ld_s{i}_spk{spk}.png")),
                &p.ld_projection,
                4,
            )?;
            render::heatmap(
                &out.join(format!("sd_s{i}_spk{spk}.png")),
                &p.sd_projection,
                4,
            )?;
            ld_group.push(time_mean(&p.ld_projection));
            sd_group.push(time_mean(&p.sd_projection));
            ld_points.push(time_mean(&p.ld_projection));
            mel_points.push(time_mean(&p.mel));
            labels.push(spk);
            rows.push((i, spk, sentence.language));
            preds.push(p);
        }
        // swap the speaker on a common time axis
        for (a, pa) in preds.iter().enumerate() {
            for (b, &spk) in probes.speakers.iter().enumerate() {
                if a == b {
                    continue;
                }
                let pb = s.predict(&tokens, sentence.language, spk, Some(&pa.durations))?;
                ld_swap += mean_abs_diff(&pa.ld_projection, &pb.ld_projection);
                sd_swap += mean_abs_diff(&pa.sd_projection, &pb.sd_projection);
            }
        }
        ld_groups.push(ld_group);
        sd_groups.push(sd_group);
    }
    for (name, points) in [("ld", &ld_points), ("mel", &mel_points)] {
        let xy = pca2(points);
        let mut tsv = String::from("sentence\tspeaker\tlanguage\tpc1\tpc2\n");
        for (&(i, spk, lang), (x, y)) in rows.iter().zip(&xy) {
            tsv.push_str(&format!("{i}\t{spk}\t{lang}\t{x}\t{y}\n"));
        }
        let path = out.join(format!("scatter_{name}.tsv"));
        fs::write(&path, tsv).with_context(|| format!("writing {}", path.display()))?;
        render::scatter(&out.join(format!("scatter_{name}.png")), &xy, &labels, 256)?;
    }
    let ld_between = between_variance(&ld_groups);
    let sd_between = between_variance(&sd_groups);
    let pairs =
        (probes.sentences.len() * probes.speakers.len() * (probes.speakers.len() - 1)) as f64;
    let summary = Summary {
        probes: rows.len(),
        ld_between,
        sd_between,
        rho: ld_between / sd_between,
        ld_swap_change: ld_swap / pairs,
        sd_swap_change: sd_swap / pairs,
        swap_ratio: sd_swap / ld_swap,
    };
    let path = out.join("summary.toml");
    fs::write(&path, toml::to_string(&summary)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn between_variance_of_known_groups() {
        // centroid (1, 0); squared distances 1 and 1
        let g = vec![vec![vec![0.0, 0.0], vec![2.0, 0.0]]];
        assert_eq!(between_variance(&g), 1.0);
        let same = vec![vec![vec![3.0, 4.0], vec![3.0, 4.0]]];
        assert_eq!(between_variance(&same), 0.0);
    }

    #[test]
    fn pca_recovers_the_dominant_axis() {
        let pts: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let t = i as f64 - 2.0;
                vec![3.0 * t, 0.1 * (i % 2) as f64, -3.0 * t]
            })
            .collect();
        let xy = pca2(&pts);
        let scale = (18.0f64).sqrt();
        for (i, (x, _)) in xy.iter().enumerate() {
            let t = i as f64 - 2.0;
            assert!((x.abs() - scale * t.abs()).abs() < 1e-9);
        }
        let var2: f64 = xy.iter().map(|p| p.1 * p.1).sum();
        assert!(var2 < 0.05);
    }
}
