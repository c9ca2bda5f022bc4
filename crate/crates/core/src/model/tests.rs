use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::ParamStore;
use crate::gradcheck::{check_inputs, check_params, weighted_sum};
use crate::nn::{Init, LN_EPS};
use crate::tensor::Tensor;

pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
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
    }
}

fn random(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Replaces every parameter with random values so that no gradient path is
/// trivially zero (fresh models have zero biases and identity norms).
fn randomize(store: &mut ParamStore<f64>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

fn block_fixture(tail: TailKind) -> (ParamStore<f64>, ConformerBlock) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = BlockConfig {
        dim: 6,
        ff_mult: 2,
        conv_kernel: 3,
        norm_kernel: 3,
        tail,
    };
    let block = ConformerBlock::new(
        &mut Init {
            store: &mut store,
            rng: &mut rng,
        },
        "b",
        &cfg,
    );
    randomize(&mut store, 0.2, 2);
    (store, block)
}

#[test]
fn conformer_shape_attention_rows_and_gradients() {
    for tail in [TailKind::LayerNorm, TailKind::Dsln, TailKind::Mdsln] {
        let (store, block) = block_fixture(tail);
        let x = random(5, 6, 3);
        let e = random(1, 6, 4);
        let e2 = random(1, 6, 5);
        let run = |g: &mut Graph<f64>, v: &[Var]| {
            let cond = SpeakerCond {
                e_s: v[1],
                mix: Some((v[2], 0.3)),
            };
            let y = block.forward(g, v[0], Some(cond));
            weighted_sum(g, y, 9)
        };
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let (probs, _) = block.self_attention(&mut g, xv);
        for r in 0..5 {
            assert!((g.value(probs).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let ev = g.input(e.clone());
        let y = block.forward(&mut g, xv, Some(SpeakerCond { e_s: ev, mix: None }));
        assert_eq!(g.shape(y), (5, 6));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ids: Vec<_> = store.ids().collect();
        let inputs = [x.clone(), e.clone(), e2.clone()];
        let rep = check_params(&store, &ids, 150, 1e-6, &mut rng, |g| {
            let v: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
            run(g, &v)
        });
        assert!(rep.max_rel_err < 1e-4, "{tail:?}: {rep:?}");
        let rep = check_inputs(&store, &inputs, 60, 1e-6, &mut rng, run);
        assert!(rep.max_rel_err < 1e-4, "{tail:?} inputs: {rep:?}");
    }
}

#[test]
fn dsln_matches_brute_force_and_normalizes() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sn = SpeakerNorm::new(
        &mut Init {
            store: &mut store,
            rng: &mut rng,
        },
        "n",
        5,
        3,
    );
    randomize(&mut store, 0.5, 3);
    let h = random(4, 5, 7);
    let e = random(1, 5, 8);
    let mut g = Graph::new(&store);
    let hv = g.input(h.clone());
    let ev = g.input(e.clone());
    let out = sn.dsln(&mut g, hv, ev);
    let wide = g.input(random(6, 192, 9).map(|v| 3.0 * v));
    let n = g.layer_norm(wide, LN_EPS);
    for r in 0..6 {
        let row = g.value(n).row(r);
        let mean = row.iter().sum::<f64>() / 192.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 192.0;
        assert!(
            mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-5,
            "{mean} {var}"
        );
    }
    // oracle: explicit linear maps, normalization and convolution
    let lin = |w: &Tensor<f64>, b: &Tensor<f64>| {
        Tensor::from_fn(1, w.cols(), |_, c| {
            b.get(0, c) + (0..5).map(|k| e.get(0, k) * w.get(k, c)).sum::<f64>()
        })
    };
    let wk = lin(store.get(sn.weight.w), store.get(sn.weight.b));
    let bk = lin(store.get(sn.bias.w), store.get(sn.bias.b));
    for t in 0..4 {
        for c in 0..5 {
            let mut acc = bk.get(0, c);
            for j in 0..3 {
                let src = t as isize + j as isize - 1;
                if (0..4).contains(&src) {
                    let row = h.row(src as usize);
                    let mean = row.iter().sum::<f64>() / 5.0;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
                    acc += wk.get(0, j * 5 + c) * (row[c] - mean) / (var + LN_EPS).sqrt();
                }
            }
            assert!((g.value(out).get(t, c) - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn speaker_norm_gradients() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sn = SpeakerNorm::new(
        &mut Init {
            store: &mut store,
            rng: &mut rng,
        },
        "n",
        6,
        3,
    );
    randomize(&mut store, 0.5, 3);
    let inputs = [random(5, 6, 1), random(1, 6, 2), random(1, 6, 3)];
    let ids: Vec<_> = store.ids().collect();
    for gamma in [None, Some(0.35)] {
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let y = match gamma {
                None => sn.dsln(g, v[0], v[1]),
                Some(gm) => sn.mdsln(g, v[0], v[1], v[2], gm),
            };
            weighted_sum(g, y, 4)
        };
        let rep = check_inputs(&store, &inputs, 100, 1e-6, &mut rng, f);
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
        let rep = check_params(&store, &ids, 100, 1e-6, &mut rng, |g| {
            let v: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
            f(g, &v)
        });
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }
}

#[test]
fn beta_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| sample_gamma(&mut rng, true)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 0.01);
    assert!((var - 0.05).abs() < 0.005);
}

#[test]
fn variance_predictor_contract() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vp = VariancePredictor::new(
        &mut Init {
            store: &mut store,
            rng: &mut rng,
        },
        "vp",
        6,
        6,
        3,
        1,
    );
    randomize(&mut store, 0.2, 5);
    let x = random(7, 6, 1);
    let run = |store: &ParamStore<f64>| {
        let mut g = Graph::new(store);
        let xv = g.input(x.clone());
        let y = vp.forward(&mut g, xv);
        g.value(y).clone()
    };
    assert_eq!(run(&store), run(&store));
    let mut dropped = Graph::new(&store).with_dropout(0.5, ChaCha8Rng::seed_from_u64(0));
    let xv = dropped.input(x.clone());
    let y = vp.forward(&mut dropped, xv);
    assert_ne!(dropped.value(y), &run(&store));

    let ids: Vec<_> = store.ids().collect();
    let rep = check_params(&store, &ids, 120, 1e-6, &mut rng, |g| {
        let xv = g.input(x.clone());
        let y = vp.forward(g, xv);
        weighted_sum(g, y, 2)
    });
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");

    let mut zeroed = store.clone();
    for id in [vp.head.w, vp.head.b] {
        zeroed
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    assert!(run(&zeroed).data().iter().all(|&v| v == 0.0));
}

#[test]
fn ldv_teacher_forcing_and_threshold() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ldv = LdvAdaptor::new(
        &mut Init {
            store: &mut store,
            rng: &mut rng,
        },
        "ldv",
        6,
        3,
        3,
    );
    randomize(&mut store, 0.2, 5);
    let h = random(3, 6, 1);
    let target = BinarySeq(vec![0, 1, 0]);
    let zeros = BinarySeq(vec![0, 0, 0]);
    let mut g = Graph::new(&store);
    let hv = g.input(h.clone());
    let out = ldv.forward(&mut g, hv, Some((&target, &zeros))).unwrap();
    let p = g.input(Tensor::column(&[0.0, 1.0, 0.0]));
    let pe = ldv.pitch_embed.forward(&mut g, p);
    let z = g.input(Tensor::zeros(3, 1));
    let ee = ldv.energy_embed.forward(&mut g, z);
    let expected = g.add(hv, pe);
    let expected = g.add(expected, ee);
    assert_eq!(g.value(out.h), g.value(expected));
    assert!(ldv
        .forward(&mut g, hv, Some((&BinarySeq(vec![1]), &zeros)))
        .is_err());

    assert_eq!(threshold_logits(&[-10.0f64; 4]).0, vec![0; 4]);
    assert_eq!(threshold_logits(&[0.0f64, 0.3, -0.1]).0, vec![1, 1, 0]);
    let d = durations_from_log(&[-3.0f64, 0.0, 1.0f64.ln_1p(), 3.0f64.ln_1p(), 50.0]);
    assert_eq!(&d.0[..4], &[1, 1, 1, 3]);
    assert!(d.0.iter().all(|&n| n >= 1));
}

#[test]
fn length_regulation() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let h = random(3, 2, 1);
    let hv = g.input(h.clone());
    let same = length_regulate(&mut g, hv, &DurationSeq(vec![1, 1, 1]), 3).unwrap();
    assert_eq!(g.value(same), &h);
    let one = g.input(Tensor::from_vec(1, 2, vec![0.5, -2.0]));
    let rep = length_regulate(&mut g, one, &DurationSeq(vec![3]), 3).unwrap();
    assert_eq!(g.value(rep).data(), &[0.5, -2.0, 0.5, -2.0, 0.5, -2.0]);
    let d = DurationSeq(vec![2, 0, 3]);
    let out = length_regulate(&mut g, hv, &d, 5).unwrap();
    let mut oracle = Vec::new();
    for (i, &n) in d.0.iter().enumerate() {
        for _ in 0..n {
            oracle.extend_from_slice(h.row(i));
        }
    }
    assert_eq!(g.value(out).data(), &oracle[..]);
    assert!(length_regulate(&mut g, hv, &d, 6).is_err());
}

#[test]
fn linguistic_modules() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = &mut Init {
        store: &mut store,
        rng: &mut rng,
    };
    let enc = LinguisticEncoder::new(init, "enc", 7, 6, 5);
    let cfg = BlockConfig {
        dim: 6,
        ff_mult: 2,
        conv_kernel: 3,
        norm_kernel: 3,
        tail: TailKind::LayerNorm,
    };
    let tp = TextPredictor::new(init, "tp", &cfg, 1, 4);
    let ad = LinguisticAdaptor::new(init, "ad", 6, 3, 3);
    randomize(&mut store, 0.2, 9);
    let ssl = random(5, 7, 2);

    let mut g = Graph::new(&store);
    let s = g.input(ssl.clone());
    let z = enc.forward(&mut g, s);
    assert_eq!(g.shape(z), (5, 6));
    assert_eq!(g.value(z), &enc.encode(&store, &ssl));
    let logits = tp.forward(&mut g, z);
    assert_eq!(g.shape(logits), (5, 5));
    assert!(g.value(logits).is_finite());

    let x = g.input(Tensor::from_fn(3, 4, |r, c| {
        if c < 2 {
            (r + c) as f64 - 1.5
        } else {
            0.0
        }
    }));
    let y = glu(&mut g, x, 2);
    for r in 0..3 {
        for c in 0..2 {
            assert_eq!(g.value(y).get(r, c), 0.5 * g.value(x).get(r, c));
        }
    }

    let h = g.input(random(5, 6, 3));
    let target = g.input(random(5, 6, 4));
    let out = ad.forward(&mut g, h, Some(target));
    let conv = ad.embed.forward(&mut g, target);
    let direct = g.add(h, conv);
    assert_eq!(g.value(out.h), g.value(direct));

    let mut zeroed = store.clone();
    for id in [ad.predictor.head.w, ad.predictor.head.b] {
        zeroed
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new(&zeroed);
    let h = g.input(random(5, 6, 3));
    let out = ad.forward(&mut g, h, None);
    let zero = g.input(Tensor::zeros(5, 6));
    let conv = ad.embed.forward(&mut g, zero);
    let direct = g.add(h, conv);
    assert_eq!(g.value(out.h), g.value(direct));

    let ids: Vec<_> = store.ids().collect();
    let rep = check_params(&store, &ids, 200, 1e-6, &mut rng, |g| {
        let s = g.input(ssl.clone());
        let z = enc.forward(g, s);
        let l = tp.forward(g, z);
        let a = ad.forward(g, z, None);
        let x = weighted_sum(g, l, 1);
        let y = weighted_sum(g, a.h, 2);
        g.add(x, y)
    });
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
}

fn model_fixture() -> (ParamStore<f64>, Model) {
    let mut store = ParamStore::new();
    let model = Model::build(&tiny_config(), &mut store, 3).unwrap();
    randomize(&mut store, 0.1, 4);
    (store, model)
}

#[test]
fn embedding_contract() {
    let (mut store, model) = model_fixture();
    let mut g = Graph::new(&store);
    assert!(matches!(
        model.embed_text(&mut g, &[0, 1], 0, 7),
        Err(Error::Lookup {
            kind: "speaker",
            id: 7,
            ..
        })
    ));
    assert!(model.embed_text(&mut g, &[], 0, 0).is_err());
    let a = model.embed_text(&mut g, &[0, 1, 4], 0, 0).unwrap();
    let b = model.embed_text(&mut g, &[0, 1, 4], 1, 0).unwrap();
    assert_ne!(g.value(a.h), g.value(b.h));
    drop(g);
    for id in [model.language_table, model.speaker_table] {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new(&store);
    let e = model.embed_text(&mut g, &[2, 3], 1, 2).unwrap();
    assert_eq!(g.value(e.h), g.value(e.tokens));
}

fn teacher(g: &mut Graph<f64>, durations: &[usize], hidden: usize) -> TeacherForcing<f64> {
    let d = DurationSeq(durations.to_vec());
    let frames = d.total();
    let l = d.len();
    TeacherForcing {
        ld_pitch: BinarySeq((0..l).map(|i| (i % 2) as u8).collect()),
        ld_energy: BinarySeq((0..l).map(|i| ((i + 1) % 2) as u8).collect()),
        linguistic: g.input(random(frames, hidden, 21)),
        sd_pitch: random(frames, 1, 22).into_data(),
        sd_energy: random(frames, 1, 23).into_data(),
        durations: d,
    }
}

#[test]
fn synthesis_shapes_and_decomposition() {
    let (mut store, model) = model_fixture();
    let mut g = Graph::new(&store);
    let t = teacher(&mut g, &[2, 1, 3], 8);
    let s = model
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
        .unwrap();
    assert_eq!(g.shape(s.mel), (6, 4));
    assert_eq!(g.shape(s.h_sd), (6, 8));
    let diff = g.sub(s.mel, s.sd_projection);
    assert!(g.value(diff).max_abs_diff(g.value(s.ld_projection)) <= 1e-15);

    let inf = model
        .synthesize(
            &mut g,
            &[1, 2, 3],
            0,
            1,
            Mode::Infer { durations: None },
            None,
        )
        .unwrap();
    assert_eq!(g.shape(inf.mel).0, inf.durations.total());
    assert!(inf.durations.0.iter().all(|&n| n >= 1));
    drop(g);

    for id in [model.proj_sd.w, model.proj_sd.b] {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new(&store);
    let t = teacher(&mut g, &[2, 1, 3], 8);
    let s = model
        .synthesize(&mut g, &[1, 2, 3], 0, 1, Mode::Train(&t), None)
        .unwrap();
    assert_eq!(g.value(s.mel), g.value(s.ld_projection));
}

#[test]
fn speaker_changes_sd_output_and_embedding_off_keeps_backbone() {
    let (mut store, model) = model_fixture();
    let run = |store: &ParamStore<f64>, spk: usize| {
        let mut g = Graph::new(store);
        let t = teacher(&mut g, &[2, 2], 8);
        let s = model
            .synthesize(&mut g, &[0, 3], 1, spk, Mode::Train(&t), None)
            .unwrap();
        (
            g.value(s.h_sd).clone(),
            g.value(s.ldv.log_durations).clone(),
        )
    };
    assert!(run(&store, 0).0.max_abs_diff(&run(&store, 1).0) > 1e-6);

    // with the variance embeddings disabled the injected values cannot matter
    for id in [model.ldv.pitch_embed.w, model.ldv.energy_embed.w] {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new(&store);
    let t1 = teacher(&mut g, &[2, 2], 8);
    let mut t2 = t1.clone();
    t2.ld_pitch = BinarySeq(vec![1, 1]);
    t2.ld_energy = BinarySeq(vec![0, 0]);
    let a = model
        .synthesize(&mut g, &[0, 3], 1, 0, Mode::Train(&t1), None)
        .unwrap();
    let b = model
        .synthesize(&mut g, &[0, 3], 1, 0, Mode::Train(&t2), None)
        .unwrap();
    assert_eq!(g.value(a.mel), g.value(b.mel));
}

#[test]
fn end_to_end_gradient_wrt_token_embeddings() {
    let (store, model) = model_fixture();
    let target = random(6, 4, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rep = check_params(&store, &[model.token_table], 40, 1e-6, &mut rng, |g| {
        let t = teacher(g, &[4, 2], 8);
        let s = model
            .synthesize(g, &[1, 3], 0, 2, Mode::Train(&t), None)
            .unwrap();
        g.l1_mean(s.mel, target.clone(), 6)
    });
    assert!(rep.max_rel_err < 1e-3, "{rep:?}");
}

#[test]
fn attach_checks_layout() {
    let (store, model) = model_fixture();
    let again = Model::attach(&tiny_config(), &store).unwrap();
    assert_eq!(again.proj_sd.w, model.proj_sd.w);
    let other = ModelConfig {
        n_speakers: 4,
        ..tiny_config()
    };
    assert!(Model::attach(&other, &store).is_err());
}
