//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.
//!
//! The last three criteria drive the `dtts` binary through a full
//! 2000-step run on the toy corpus (three runs in total), so this target
//! takes a while on a single core.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use dtts::align::{forward_sum_loss, viterbi_durations};
use dtts::autodiff::{Graph, ParamStore, Var};
use dtts::gradcheck::{check_inputs, check_params, weighted_sum, GradReport};
use dtts::model::{
    batch_shuffle, mix_statistics, random_permutation, sample_gamma, BlockConfig, ConformerBlock,
    LinguisticEncoder, Mixing, Mode, Model, ModelConfig, SpeakerCond, SpeakerNorm, TailKind,
    TeacherForcing, VariancePredictor,
};
use dtts::nn::Init;
use dtts::signal::{
    extract_pitch, frame_energy, mel_spectrogram, perturb, PerturbConfig, Waveform,
};
use dtts::targets::{average_per_token, binarize, BinarySeq, DurationSeq};
use dtts::training::ctc_loss;
use dtts::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn randomize(store: &mut ParamStore<f64>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

fn speaker_norm(dim: usize, seed: u64) -> (ParamStore<f64>, SpeakerNorm) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sn = SpeakerNorm::new(
        &mut Init {
            store: &mut store,
            rng: &mut rng,
        },
        "n",
        dim,
        3,
    );
    randomize(&mut store, 0.5, seed + 1);
    (store, sn)
}

fn tiny_model() -> (ParamStore<f64>, Model) {
    let cfg = ModelConfig {
        vocab_size: 5,
        n_languages: 2,
        n_speakers: 3,
        hidden: 8,
        ff_mult: 2,
        conv_kernel: 3,
        ld_encoder_blocks: 1,
        ld_decoder_blocks: 1,
        sd_encoder_blocks: 1,
        sd_decoder_blocks: 1,
        text_predictor_blocks: 1,
        ssl_dim: 6,
        n_mels: 4,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::new();
    let model = Model::build(&cfg, &mut store, 3).expect("tiny model");
    randomize(&mut store, 0.1, 4);
    (store, model)
}

fn teacher(
    g: &mut Graph<f64>,
    durations: &[usize],
    hidden: usize,
    seed: u64,
) -> TeacherForcing<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = DurationSeq(durations.to_vec());
    let (frames, l) = (d.total(), d.len());
    TeacherForcing {
        ld_pitch: BinarySeq((0..l).map(|i| (i % 2) as u8).collect()),
        ld_energy: BinarySeq((0..l).map(|i| ((i + 1) % 2) as u8).collect()),
        linguistic: g.input(random(frames, hidden, &mut rng)),
        sd_pitch: random(frames, 1, &mut rng).into_data(),
        sd_energy: random(frames, 1, &mut rng).into_data(),
        durations: d,
    }
}

// ---------------------------------------------------------------- exactness

fn exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (store, sn) = speaker_norm(6, 1);
    let mut checked = 0;
    for _ in 0..20 {
        let (h, e, e2) = (
            random(5, 6, &mut rng),
            random(1, 6, &mut rng),
            random(1, 6, &mut rng),
        );
        let mut g = Graph::new(&store);
        let (hv, ev, ev2) = (g.input(h), g.input(e), g.input(e2));
        let plain = sn.dsln(&mut g, hv, ev);
        let kept = sn.mdsln(&mut g, hv, ev, ev2, 1.0);
        ensure(g.value(plain) == g.value(kept), || {
            "MDSLN with gamma = 1 differs from DSLN".into()
        })?;
        let gamma = rng.random_range(0.0..1.0);
        let self_mixed = sn.mdsln(&mut g, hv, ev, ev, gamma);
        let diff = g.value(plain).max_abs_diff(g.value(self_mixed));
        ensure(diff <= 1e-12, || {
            format!("MDSLN mixed with itself differs by {diff:e}")
        })?;

        let (w, b) = sn.statistics(&mut g, ev);
        let (wt, bt) = sn.statistics(&mut g, ev2);
        let (w1, b1) = mix_statistics(&mut g, w, wt, b, bt, 1.0);
        let (w0, b0) = mix_statistics(&mut g, w, wt, b, bt, 0.0);
        ensure(
            g.value(w1) == g.value(w) && g.value(b1) == g.value(b),
            || "mix_statistics(gamma = 1) is not the own statistics".into(),
        )?;
        ensure(
            g.value(w0) == g.value(wt) && g.value(b0) == g.value(bt),
            || "mix_statistics(gamma = 0) is not the partner statistics".into(),
        )?;
        checked += 1;
    }

    for n in 1..40 {
        let rows: Vec<u32> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let perm = random_permutation(n, &mut rng);
        let out = batch_shuffle(&rows, &perm).map_err(|e| e.to_string())?;
        for (k, &p) in perm.iter().enumerate() {
            ensure(out[k] == rows[p], || {
                "batch_shuffle does not follow the permutation".into()
            })?;
        }
        let (mut a, mut b) = (rows.clone(), out);
        a.sort_unstable();
        b.sort_unstable();
        ensure(a == b, || format!("batch of {n} lost or duplicated rows"))?;
    }

    for _ in 0..1000 {
        let len = rng.random_range(1..40);
        // coarse values so that ties are frequent
        let avg: Vec<f64> = (0..len)
            .map(|_| f64::from(rng.random_range(0..6u8)) * 0.5)
            .collect();
        let mut oracle = vec![0u8; len];
        for i in 1..len {
            if avg[i - 1] < avg[i] {
                oracle[i] = 1;
            }
        }
        ensure(binarize(&avg).0 == oracle, || format!("binarize({avg:?})"))?;
    }

    let (store, model) = tiny_model();
    let mut g = Graph::new(&store);
    let t = teacher(&mut g, &[2, 1, 3], 8, 5);
    let train = model
        .synthesize(
            &mut g,
            &[1, 2, 3],
            0,
            1,
            Mode::Train(&t),
            Some(Mixing {
                partner: 2,
                gamma: 0.4,
            }),
        )
        .map_err(|e| e.to_string())?;
    let infer = model
        .synthesize(&mut g, &[4, 0], 1, 2, Mode::Infer { durations: None }, None)
        .map_err(|e| e.to_string())?;
    for s in [&train, &infer] {
        let (mel, ld, sd) = (
            g.value(s.mel),
            g.value(s.ld_projection),
            g.value(s.sd_projection),
        );
        let exact = mel
            .data()
            .iter()
            .zip(ld.data().iter().zip(sd.data()))
            .all(|(m, (a, b))| *m == a + b);
        ensure(exact, || "mel is not the sum of the two projections".into())?;
    }
    Ok(format!(
        "{checked} norm instances, 39 shuffles, 1000 binarized sequences, 2 decompositions"
    ))
}

// ------------------------------------------------------------------ oracles

/// Monotonic paths from the first to the last token, one token per frame.
fn paths(t_len: usize, l_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0]];
    for _ in 1..t_len {
        out = out
            .into_iter()
            .flat_map(|p| {
                let last = *p.last().unwrap();
                [last, last + 1]
                    .into_iter()
                    .filter(|&n| n < l_len)
                    .map(move |n| {
                        let mut q = p.clone();
                        q.push(n);
                        q
                    })
            })
            .collect();
    }
    out.retain(|p| *p.last().unwrap() == l_len - 1);
    out
}

fn softmax_rows(x: &Tensor<f64>) -> Tensor<f64> {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let m = x.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = x.row(r).iter().map(|v| (v - m).exp()).sum();
        for (o, v) in out.row_mut(r).iter_mut().zip(x.row(r)) {
            *o = (v - m).exp() / z;
        }
    }
    out
}

fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

fn all_sequences(len: usize, classes: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..classes).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let tol = 1e-8;
    let mut alignments = 0;
    for t_len in 1..=6 {
        for l_len in 1..=t_len.min(3) {
            for _ in 0..10 {
                let a = softmax_rows(&Tensor::from_fn(t_len, l_len, |_, _| {
                    rng.random_range(-3.0..3.0)
                }));
                let mut total = 0.0;
                let mut best = (f64::NEG_INFINITY, Vec::new());
                for p in paths(t_len, l_len) {
                    let prob: f64 = p.iter().enumerate().map(|(t, &i)| a.get(t, i)).product();
                    total += prob;
                    if prob > best.0 {
                        best = (prob, p);
                    }
                }
                let expected = -total.ln() / t_len as f64;
                let got = forward_sum_loss(&a).map_err(|e| e.to_string())?;
                ensure((got - expected).abs() < tol, || {
                    format!("forward-sum T={t_len} L={l_len}: {got} vs {expected}")
                })?;
                let mut counts = vec![0usize; l_len];
                for &i in &best.1 {
                    counts[i] += 1;
                }
                let d = viterbi_durations(&a).map_err(|e| e.to_string())?;
                ensure(d.0 == counts, || {
                    format!("Viterbi T={t_len} L={l_len}: {:?} vs {counts:?}", d.0)
                })?;
                alignments += 1;
            }
        }
    }

    let (classes, blank) = (3, 2);
    let mut ctc_cases = 0;
    for t_len in 1..=4 {
        let logits = random(t_len, classes, &mut rng).map(|v| 2.0 * v);
        let p = softmax_rows(&logits);
        for target_len in 1..=t_len {
            for target in all_sequences(target_len, 2) {
                let prob: f64 = all_sequences(t_len, classes)
                    .iter()
                    .filter(|path| collapse(path, blank) == target)
                    .map(|path| {
                        path.iter()
                            .enumerate()
                            .map(|(t, &k)| p.get(t, k))
                            .product::<f64>()
                    })
                    .sum();
                if prob == 0.0 {
                    continue;
                }
                let (loss, _) = ctc_loss(&logits, &target, blank).map_err(|e| e.to_string())?;
                ensure((loss + prob.ln()).abs() < tol, || {
                    format!("CTC T'={t_len} target {target:?}: {loss} vs {}", -prob.ln())
                })?;
                ctc_cases += 1;
            }
        }
    }

    for _ in 0..500 {
        let l_len = rng.random_range(1..10);
        let d = DurationSeq((0..l_len).map(|_| rng.random_range(0..5)).collect());
        let frames: Vec<f64> = (0..d.total())
            .map(|_| rng.random_range(-5.0..5.0))
            .collect();
        if frames.is_empty() {
            continue;
        }
        let got = average_per_token(&frames, &d).map_err(|e| e.to_string())?;
        let mut start = 0;
        let mut prev = 0.0;
        for (i, &n) in d.0.iter().enumerate() {
            let segment = &frames[start..start + n];
            let want = if n == 0 {
                prev
            } else {
                segment.iter().sum::<f64>() / n as f64
            };
            ensure((got[i] - want).abs() < tol, || {
                format!("average_per_token {:?}", d.0)
            })?;
            prev = want;
            start += n;
        }
    }

    let w = Waveform::new(
        (0..8000)
            .map(|i| (i as f64 * 0.05).sin() * 0.3 + rng.random_range(-0.01..0.01))
            .collect(),
    );
    let mel = mel_spectrogram(&w).map_err(|e| e.to_string())?;
    let energy = frame_energy(&mel);
    for (t, &e) in energy.iter().enumerate() {
        let row = mel.frames.row(t);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        ensure((e - mean).abs() < tol, || {
            format!("frame_energy at frame {t}")
        })?;
    }
    Ok(format!(
        "{alignments} alignments, {ctc_cases} CTC instances, 500 segmentations, {} energy frames",
        energy.len()
    ))
}

// ---------------------------------------------------------------- gradients

fn grad_ok(
    name: &str,
    rep: &GradReport,
    tol: f64,
    min: usize,
    log: &mut Vec<String>,
) -> Result<(), String> {
    ensure(rep.checked >= min && rep.max_rel_err < tol, || {
        format!(
            "{name}: {} coordinates, max rel err {:e} at {}",
            rep.checked, rep.max_rel_err, rep.worst
        )
    })?;
    log.push(format!("{name} {:.1e}", rep.max_rel_err));
    Ok(())
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut log = Vec::new();
    let (tol, floor) = (1e-4, 1e-6);

    let (store, sn) = speaker_norm(6, 7);
    let ids: Vec<_> = store.ids().collect();
    let inputs = [
        random(5, 6, &mut rng),
        random(1, 6, &mut rng),
        random(1, 6, &mut rng),
    ];
    for (name, gamma) in [("DSLN", None), ("MDSLN", Some(0.35))] {
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let y = match gamma {
                None => sn.dsln(g, v[0], v[1]),
                Some(gm) => sn.mdsln(g, v[0], v[1], v[2], gm),
            };
            weighted_sum(g, y, 4)
        };
        let mut rep = check_params(&store, &ids, 100, floor, &mut rng, |g| {
            let v: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
            f(g, &v)
        });
        let on_inputs = check_inputs(&store, &inputs, 100, floor, &mut rng, f);
        rep.checked += on_inputs.checked;
        rep.max_rel_err = rep.max_rel_err.max(on_inputs.max_rel_err);
        grad_ok(name, &rep, tol, 100, &mut log)?;
    }

    let mut store = ParamStore::new();
    let block = {
        let mut brng = ChaCha8Rng::seed_from_u64(8);
        let cfg = BlockConfig {
            dim: 6,
            ff_mult: 2,
            conv_kernel: 3,
            norm_kernel: 3,
            tail: TailKind::Mdsln,
        };
        ConformerBlock::new(
            &mut Init {
                store: &mut store,
                rng: &mut brng,
            },
            "b",
            &cfg,
        )
    };
    randomize(&mut store, 0.2, 9);
    let ids: Vec<_> = store.ids().collect();
    let inputs = [
        random(5, 6, &mut rng),
        random(1, 6, &mut rng),
        random(1, 6, &mut rng),
    ];
    let rep = check_params(&store, &ids, 150, floor, &mut rng, |g| {
        let v: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let cond = SpeakerCond {
            e_s: v[1],
            mix: Some((v[2], 0.3)),
        };
        let y = block.forward(g, v[0], Some(cond));
        weighted_sum(g, y, 9)
    });
    grad_ok("conformer block", &rep, tol, 100, &mut log)?;

    let mut store = ParamStore::new();
    let (vp, enc) = {
        let mut brng = ChaCha8Rng::seed_from_u64(10);
        let mut init = Init {
            store: &mut store,
            rng: &mut brng,
        };
        let vp = VariancePredictor::new(&mut init, "vp", 6, 6, 3, 1);
        let enc = LinguisticEncoder::new(&mut init, "enc", 7, 6, 5);
        (vp, enc)
    };
    randomize(&mut store, 0.2, 11);
    let x = random(7, 6, &mut rng);
    let vp_ids: Vec<_> = store
        .ids()
        .filter(|&id| store.name(id).starts_with("vp."))
        .collect();
    let rep = check_params(&store, &vp_ids, 120, floor, &mut rng, |g| {
        let xv = g.input(x.clone());
        let y = vp.forward(g, xv);
        weighted_sum(g, y, 2)
    });
    grad_ok("variance predictor", &rep, tol, 100, &mut log)?;
    let ssl = random(5, 7, &mut rng);
    let enc_ids: Vec<_> = store
        .ids()
        .filter(|&id| store.name(id).starts_with("enc."))
        .collect();
    let rep = check_params(&store, &enc_ids, 120, floor, &mut rng, |g| {
        let s = g.input(ssl.clone());
        let z = enc.forward(g, s);
        weighted_sum(g, z, 3)
    });
    grad_ok("linguistic encoder", &rep, tol, 100, &mut log)?;

    let (store, model) = tiny_model();
    let ids: Vec<_> = store.ids().collect();
    let target = random(6, 4, &mut rng);
    let rep = check_params(&store, &ids, 150, floor, &mut rng, |g| {
        let t = teacher(g, &[4, 2], 8, 12);
        let s = model
            .synthesize(
                g,
                &[1, 3],
                0,
                2,
                Mode::Train(&t),
                Some(Mixing {
                    partner: 1,
                    gamma: 0.6,
                }),
            )
            .expect("synthesis");
        let mel = g.l1_mean(s.mel, target.clone(), 6);
        let dur = weighted_sum(g, s.ldv.log_durations, 13);
        let pitch = weighted_sum(g, s.ldv.pitch_logits, 14);
        let sd = weighted_sum(g, s.sd_pitch, 15);
        let a = g.add(mel, dur);
        let b = g.add(pitch, sd);
        g.add(a, b)
    });
    grad_ok("end-to-end", &rep, 1e-3, 100, &mut log)?;
    Ok(log.join(", "))
}

// -------------------------------------------------------------- statistical

fn statistical() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| sample_gamma(&mut rng, true)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    ensure(
        (mean - 0.5).abs() < 0.01 && (var - 0.05).abs() < 0.005,
        || format!("Beta(2,2) mean {mean}, var {var}"),
    )?;

    let mut yin = Vec::new();
    for f in [110.0, 220.0, 440.0] {
        let w = Waveform::new(
            (0..16_000)
                .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 16_000.0).sin())
                .collect(),
        );
        let track = extract_pitch(&w).map_err(|e| e.to_string())?;
        let voiced: Vec<f64> = track.f0.iter().copied().filter(|&v| v > 0.0).collect();
        let good = voiced
            .iter()
            .filter(|&&v| ((v - f) / f).abs() < 0.01)
            .count();
        let frac = good as f64 / voiced.len().max(1) as f64;
        ensure(
            voiced.len() * 10 >= track.f0.len() * 9 && frac >= 0.95,
            || {
                format!(
                    "YIN at {f} Hz: {} of {} frames voiced, {frac} within 1%",
                    voiced.len(),
                    track.f0.len()
                )
            },
        )?;
        yin.push(format!("{f} Hz {frac:.3}"));
    }

    let w = Waveform::new(
        (0..16_000)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                (1..10)
                    .map(|h| {
                        0.3 / h as f64 * (2.0 * std::f64::consts::PI * 140.0 * h as f64 * t).sin()
                    })
                    .sum()
            })
            .collect(),
    );
    let out = perturb(&w, &PerturbConfig::identity()).map_err(|e| e.to_string())?;
    let err = out
        .samples
        .iter()
        .zip(&w.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(out.samples.len() == w.samples.len() && err < 1e-3, || {
        format!("identity perturbation max abs diff {err:e}")
    })?;
    Ok(format!(
        "Beta mean {mean:.4} var {var:.4}; YIN {}; identity perturb {err:.1e}",
        yin.join(", ")
    ))
}

// ------------------------------------------------------------ training runs

struct Runs {
    root: PathBuf,
    a_elapsed: Duration,
}

fn dtts(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dtts"))
        .args(args)
        .env_remove("DTTS_CACHE")
        .output()
        .map_err(|e| format!("spawning dtts: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "dtts {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write_config(root: &Path, name: &str) -> Result<PathBuf, String> {
    let path = root.join(format!("{name}.toml"));
    let text = format!(
        "[data]\ncache = \"cache\"\nprovider = \"stub\"\n\n[run]\nout_dir = \"{name}\"\nsteps = 2000\n\
         checkpoint_every = 1000\neval_every = 50\n\n[train]\nseed = 7\n"
    );
    fs::write(&path, text).map_err(|e| e.to_string())?;
    Ok(path)
}

fn prepare_runs(root: &Path) -> Result<Runs, String> {
    let toy = root.join("toy");
    dtts(&[
        "toy",
        "--out",
        path_str(&toy),
        "--utterances-per-speaker",
        "8",
        "--seed",
        "0",
    ])?;
    let manifest = toy.join("manifest.tsv");
    dtts(&[
        "prepare",
        "--manifest",
        path_str(&manifest),
        "--out",
        path_str(&root.join("cache")),
        "--provider",
        "stub",
        "--seed",
        "0",
    ])?;
    let a = write_config(root, "run_a")?;
    let started = Instant::now();
    dtts(&["train", "--config", path_str(&a)])?;
    let a_elapsed = started.elapsed();
    Ok(Runs {
        root: root.to_path_buf(),
        a_elapsed,
    })
}

struct EvalRow {
    step: u64,
    split: String,
    mel_l1: f64,
    ld_pitch_acc: f64,
    durations_valid: bool,
}

fn eval_rows(path: &Path) -> Result<Vec<EvalRow>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let bad = || format!("malformed eval line {l:?}");
            Ok(EvalRow {
                step: f[0].parse().map_err(|_| bad())?,
                split: f[1].to_string(),
                mel_l1: f[2].parse().map_err(|_| bad())?,
                ld_pitch_acc: f[3].parse().map_err(|_| bad())?,
                durations_valid: f[5] == "true",
            })
        })
        .collect()
}

fn overfit(runs: &Runs) -> Outcome {
    let rows = eval_rows(&runs.root.join("run_a/eval.tsv"))?;
    let train = |step: u64| {
        rows.iter()
            .find(|r| r.step == step && r.split == "train")
            .ok_or_else(|| format!("no train evaluation at step {step}"))
    };
    let (early, last) = (train(50)?, train(2000)?);
    let drop = 1.0 - last.mel_l1 / early.mel_l1;
    let minutes = runs.a_elapsed.as_secs_f64() / 60.0;
    let summary = format!(
        "train mel L1 {:.4} -> {:.4} ({:.0}% drop), LD pitch acc {:.3}, {minutes:.1} min",
        early.mel_l1,
        last.mel_l1,
        100.0 * drop,
        last.ld_pitch_acc
    );
    ensure(drop >= 0.5, || {
        format!("mel L1 fell by less than half: {summary}")
    })?;
    ensure(
        rows.iter()
            .filter(|r| r.step == 2000)
            .all(|r| r.durations_valid),
        || format!("invalid Viterbi durations at the end: {summary}"),
    )?;
    ensure(last.ld_pitch_acc >= 0.9, || {
        format!("LD pitch accuracy too low: {summary}")
    })?;
    ensure(minutes < 30.0, || format!("too slow: {summary}"))?;
    Ok(summary)
}

fn disentanglement(runs: &Runs) -> Outcome {
    let probes = runs.root.join("probes.toml");
    let text = "speakers = [0, 1, 2, 3]\n\n\
        [[sentence]]\ntext = \"a e i o u\"\nlanguage = 0\n\n\
        [[sentence]]\ntext = \"o u a e\"\nlanguage = 0\n\n\
        [[sentence]]\ntext = \"ɑ ɛ ɪ ɔ ʊ\"\nlanguage = 1\n\n\
        [[sentence]]\ntext = \"ʊ ɔ ɑ ɛ\"\nlanguage = 1\n";
    fs::write(&probes, text).map_err(|e| e.to_string())?;
    let out = runs.root.join("inspect");
    dtts(&[
        "inspect",
        "--ckpt",
        path_str(&runs.root.join("run_a/ckpt-2000.bin")),
        "--probes",
        path_str(&probes),
        "--out",
        path_str(&out),
    ])?;
    let summary: toml::Table = fs::read_to_string(out.join("summary.toml"))
        .map_err(|e| e.to_string())?
        .parse()
        .map_err(|e: toml::de::Error| e.to_string())?;
    let get = |k: &str| {
        summary
            .get(k)
            .and_then(toml::Value::as_float)
            .ok_or(format!("summary lacks {k}"))
    };
    let (rho, ratio) = (get("rho")?, get("swap_ratio")?);
    let line = format!("rho {rho:.4}, speaker-swap ratio {ratio:.2}");
    ensure(rho < 1.0, || format!("rho not below 1: {line}"))?;
    ensure(ratio >= 5.0, || format!("swap ratio below 5: {line}"))?;
    Ok(line)
}

fn same_bytes(a: &Path, b: &Path) -> Result<(), String> {
    let read = |p: &Path| fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    ensure(read(a)? == read(b)?, || {
        format!("{} and {} differ", a.display(), b.display())
    })
}

fn reproducibility(runs: &Runs) -> Outcome {
    let root = &runs.root;
    let b = write_config(root, "run_b")?;
    dtts(&["train", "--config", path_str(&b)])?;
    // resume from the midpoint into a directory holding the full logs, as
    // after an interruption late in the run
    let c = write_config(root, "run_c")?;
    fs::create_dir_all(root.join("run_c")).map_err(|e| e.to_string())?;
    for f in ["metrics.tsv", "eval.tsv"] {
        fs::copy(root.join("run_a").join(f), root.join("run_c").join(f))
            .map_err(|e| e.to_string())?;
    }
    dtts(&[
        "train",
        "--config",
        path_str(&c),
        "--resume",
        path_str(&root.join("run_a/ckpt-1000.bin")),
    ])?;
    for other in ["run_b", "run_c"] {
        for f in ["metrics.tsv", "eval.tsv", "ckpt-2000.bin"] {
            same_bytes(&root.join("run_a").join(f), &root.join(other).join(f))?;
        }
    }
    Ok("repeat and resumed runs match bit for bit (metrics, evaluations, final checkpoint)".into())
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let result = f();
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{id}] {name} ({secs:.2}s): {detail}"),
            Err(why) => {
                failures += 1;
                println!("FAIL [{id}] {name} ({secs:.2}s): {why}");
            }
        }
    };
    report(1, "exactness", &mut exactness);
    report(2, "oracles", &mut oracles);
    report(3, "gradients", &mut gradients);
    report(4, "statistics", &mut statistical);

    let dir = tempfile::tempdir().expect("temporary directory");
    let runs = prepare_runs(dir.path());
    let staged = |f: fn(&Runs) -> Outcome| match &runs {
        Ok(r) => f(r),
        Err(e) => Err(format!("training run failed: {e}")),
    };
    report(5, "overfit run", &mut || staged(overfit));
    report(6, "disentanglement", &mut || staged(disentanglement));
    report(7, "reproducibility", &mut || staged(reproducibility));
    if failures > 0 {
        println!("{failures} of 7 criteria failed");
        std::process::exit(1);
    }
    println!("all 7 criteria passed");
}
