//! Training loop with metrics, evaluation and checkpoint files.
//!
//! `out_dir/metrics.tsv` holds one line per step, `out_dir/eval.tsv` one
//! line per evaluated split, and `out_dir/ckpt-<step>.bin` the checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::losses::TERMS;
use super::{Checkpoint, EvalReport, StepReport, Trainer};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Global step to stop at; a resumed run uses the same target.
    pub steps: u64,
    /// 0 disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: u64,
    /// 0 disables periodic evaluation; the final one always runs.
    pub eval_every: u64,
}

pub const METRICS_FILE: &str = "metrics.tsv";
pub const EVAL_FILE: &str = "eval.tsv";
const EVAL_SPLITS: [&str; 2] = ["train", "valid"];

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("ckpt-{step}.bin"))
}

pub fn metrics_header() -> String {
    let mut cols = vec!["step", "epoch", "lr"];
    cols.extend(TERMS);
    cols.push("total");
    cols.join("\t")
}

pub fn metrics_line(r: &StepReport) -> String {
    let values: Vec<String> = match &r.losses {
        Some(l) => l
            .parts()
            .iter()
            .chain([&l.total])
            .map(|v| format!("{v}"))
            .collect(),
        None => vec!["NaN".into(); TERMS.len() + 1],
    };
    format!("{}\t{}\t{}\t{}", r.step, r.epoch, r.lr, values.join("\t"))
}

fn eval_line(step: u64, split: &str, e: &EvalReport) -> String {
    format!(
        "{step}\t{split}\t{}\t{}\t{}\t{}",
        e.mel_l1, e.ld_pitch_accuracy, e.ld_energy_accuracy, e.durations_valid
    )
}

/// Keeps the header and every line up to `step`, so a resumed run extends
/// the log it continues.
fn truncate_log(path: &Path, header: &str, step: u64) -> Result<()> {
    let kept: String = match fs::read_to_string(path) {
        Ok(text) => text
            .lines()
            .skip(1)
            .filter(|l| {
                l.split('\t')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| s <= step)
            })
            .map(|l| format!("{l}\n"))
            .collect(),
        Err(_) => String::new(),
    };
    fs::write(path, format!("{header}\n{kept}")).map_err(|e| Error::io(path, e))
}

fn append(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

fn evaluate(trainer: &Trainer, corpus: &Corpus, path: &Path) -> Result<Vec<(String, EvalReport)>> {
    let mut out = Vec::new();
    for split in EVAL_SPLITS {
        let utts = corpus.split(split)?;
        if utts.is_empty() {
            continue;
        }
        let e = trainer.evaluate(&utts, &corpus.stats)?;
        log::info!(
            "step {} {split}: mel L1 {:.4}, LD pitch acc {:.3}, LD energy acc {:.3}",
            trainer.state.step,
            e.mel_l1,
            e.ld_pitch_accuracy,
            e.ld_energy_accuracy
        );
        append(path, &eval_line(trainer.state.step, split, &e))?;
        out.push((split.to_string(), e));
    }
    Ok(out)
}

/// Trains until `opts.steps`. Writes the initial checkpoint when starting
/// from step 0.
pub fn run(
    trainer: &mut Trainer,
    corpus: &Corpus,
    opts: &RunOptions,
) -> Result<Vec<(String, EvalReport)>> {
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let metrics = opts.out_dir.join(METRICS_FILE);
    let evals = opts.out_dir.join(EVAL_FILE);
    let start = trainer.state.step;
    truncate_log(&metrics, &metrics_header(), start)?;
    truncate_log(
        &evals,
        "step\tsplit\tmel_l1\tld_pitch_acc\tld_energy_acc\tdurations_valid",
        start,
    )?;
    if start == 0 {
        Checkpoint::of(trainer).save(&checkpoint_path(&opts.out_dir, 0))?;
    }
    while trainer.state.step < opts.steps {
        let r = trainer.train_step(corpus)?;
        append(&metrics, &metrics_line(&r))?;
        if let Some(l) = &r.losses {
            if r.step % 100 == 0 {
                log::info!("step {}: total {:.4} mel {:.4}", r.step, l.total, l.mel);
            } else {
                log::debug!("step {}: total {:.4} mel {:.4}", r.step, l.total, l.mel);
            }
        }
        let step = trainer.state.step;
        if opts.checkpoint_every > 0 && step % opts.checkpoint_every == 0 && step < opts.steps {
            Checkpoint::of(trainer).save(&checkpoint_path(&opts.out_dir, step))?;
        }
        if opts.eval_every > 0 && step % opts.eval_every == 0 && step < opts.steps {
            evaluate(trainer, corpus, &evals)?;
        }
    }
    if trainer.state.step > start {
        Checkpoint::of(trainer).save(&checkpoint_path(&opts.out_dir, trainer.state.step))?;
    }
    evaluate(trainer, corpus, &evals)
}
