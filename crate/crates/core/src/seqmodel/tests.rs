use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Fwd;
use super::train::batch_loss;
use super::*;
use crate::nn::{log_sum_exp, AttnArgs, RelPos, Tape};

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        input_dim: 4,
        encoder_blocks: 2,
        decoder_blocks: 2,
        hidden: 8,
        heads: 2,
        ffn_dim: 8,
        dropout: 0.0,
        conv_kernel: 3,
        subsample_kernel: 3,
        unit_vocab: 5,
        max_len: 6,
        max_source_frames: 64,
        label_smoothing: 0.1,
        length_bins: 6,
    }
}

fn small_cfg() -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        hidden: 16,
        heads: 2,
        ffn_dim: 32,
        dropout: 0.0,
        conv_kernel: 5,
        unit_vocab: 7,
        max_len: 12,
        length_bins: 12,
        ..ModelConfig::default()
    }
}

fn rand_mel(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

#[test]
fn subsampling_divides_length_by_four() {
    let m = S2utModel::new(ModelConfig::default(), ModelKind::Nar, 1).unwrap();
    let enc = m.encode(&rand_mel(100, 80, 2)).unwrap();
    assert_eq!(enc.src_len, 25);
    assert_eq!(enc.states.shape(), (25, 64));
}

#[test]
fn encoding_is_deterministic_and_finite_on_zeros() {
    let m = S2utModel::new(small_cfg(), ModelKind::Nar, 3).unwrap();
    let x = rand_mel(30, 6, 4);
    assert_eq!(m.encode(&x).unwrap(), m.encode(&x).unwrap());
    let z = m.encode(&Mat::zeros(30, 6)).unwrap();
    assert!(z.states.is_finite());
}

#[test]
fn source_validation() {
    let m = S2utModel::new(small_cfg(), ModelKind::Nar, 3).unwrap();
    assert!(matches!(m.encode(&Mat::zeros(5000, 6)), Err(Error::Length { .. })));
    assert!(matches!(m.encode(&Mat::zeros(0, 6)), Err(Error::EmptyInput(_))));
    assert!(matches!(m.encode(&Mat::zeros(10, 5)), Err(Error::Shape(_))));
}

#[test]
fn config_validation() {
    let bad = ModelConfig {
        hidden: 10,
        heads: 4,
        ..ModelConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let sp = ModelConfig::default().special_tokens();
    let ids = [sp.eos, sp.bos, sp.mask, sp.pad];
    assert!(ids.iter().all(|&i| i >= 64));
    for (i, a) in ids.iter().enumerate() {
        assert!(ids[i + 1..].iter().all(|b| b != a));
    }
}

/// Attention probabilities for one head: values are the identity so each
/// output row is the row of attention weights.
fn attention_probs(q: Mat, k: Mat, pos: Mat, bias_v: Mat) -> Mat {
    let l = q.rows();
    let d = q.cols();
    let mut t = Tape::inference();
    let segs = segs_from_lens(&[l]);
    let mut v = Mat::zeros(l, d);
    for i in 0..l {
        v.set(i, i, 1.0);
    }
    let (q, k, v) = (t.constant(q), t.constant(k), t.constant(v));
    let pos = t.constant(pos);
    let bu = t.constant(Mat::zeros(1, d));
    let bv = t.constant(bias_v);
    let y = t.attention(AttnArgs {
        q,
        k,
        v,
        heads: 1,
        causal: false,
        q_segs: &segs,
        k_segs: &segs,
        rel: Some(RelPos {
            pos,
            center: l - 1,
            bias_u: bu,
            bias_v: bv,
        }),
    });
    t.value(y).clone()
}

#[test]
fn relative_bias_depends_only_on_offset() {
    let l = 6;
    let row = rand_mel(1, l, 5);
    let q = Mat::from_rows(&vec![row.row(0).to_vec(); l]);
    let pos = rand_mel(2 * l - 1, l, 6);
    let p = attention_probs(q, Mat::zeros(l, l), pos, rand_mel(1, l, 7));
    // log-odds against the diagonal are a function of j - i alone.
    let g = |i: usize, j: usize| p.get(i, j).ln() - p.get(i, i).ln();
    for o in -(l as isize - 1)..l as isize {
        let pairs: Vec<f64> = (0..l as isize)
            .filter(|i| (0..l as isize).contains(&(i + o)))
            .map(|i| g(i as usize, (i + o) as usize))
            .collect();
        for w in pairs.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-12, "offset {o}: {pairs:?}");
        }
    }
}

#[test]
fn uniform_content_without_position_gives_uniform_weights() {
    let l = 5;
    let k = Mat::from_rows(&vec![vec![0.3, -0.2, 0.9, 0.1, 0.4]; l]);
    let p = attention_probs(rand_mel(l, l, 8), k, Mat::zeros(2 * l - 1, l), Mat::zeros(1, l));
    for v in p.data() {
        assert!((v - 1.0 / l as f64).abs() < 1e-12);
    }
}

fn toy_pairs(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Pair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=cfg.max_len.min(4));
            Pair {
                id: format!("p{i}"),
                source: rand_mel(rng.random_range(3..12), cfg.input_dim, seed * 100 + i as u64),
                target: (0..len).map(|_| rng.random_range(0..cfg.unit_vocab)).collect(),
            }
        })
        .collect()
}

fn model_gradcheck(kind: ModelKind) {
    let cfg = tiny_cfg();
    let model = S2utModel::new(cfg.clone(), kind, 11).unwrap();
    let pairs = toy_pairs(&cfg, 2, 12);
    let batch: Vec<&Pair> = pairs.iter().collect();
    let masks: Vec<Vec<usize>> = pairs.iter().map(|p| (0..p.target.len()).step_by(2).collect()).collect();
    let rep = gradient_check(&model, &batch, &masks, 0.5, 4, 1e-5).unwrap();
    assert!(rep.max_rel_err < 1e-4, "{kind:?}: {rep:?}");
    assert!(rep.checked > 100);
}

#[test]
fn nar_model_gradients_match_finite_differences() {
    model_gradcheck(ModelKind::Nar);
}

#[test]
fn ar_model_gradients_match_finite_differences() {
    model_gradcheck(ModelKind::Ar);
}

#[test]
fn nar_forward_is_normalized_and_single_pass() {
    let m = S2utModel::new(small_cfg(), ModelKind::Nar, 13).unwrap();
    let enc = m.encode(&rand_mel(20, 6, 14)).unwrap();
    let mask = m.specials().mask;
    let mut session = m.nar_session(&enc).unwrap();
    let out = session.predict(&[vec![mask; 7], vec![1, mask, 3]]).unwrap();
    assert_eq!(session.forward_passes(), 1);
    assert_eq!(out[0].shape(), (7, 7));
    assert_eq!(out[1].shape(), (3, 7));
    for m in &out {
        for r in m.iter_rows() {
            assert!(log_sum_exp(r).abs() < 1e-9);
        }
    }
    let single = m.nar_forward(&enc, &[1, mask, 3]).unwrap();
    assert!(single.0.max_abs_diff(&out[1]) < 1e-12, "batched equals single");
    assert!(matches!(m.nar_forward(&enc, &[m.specials().bos]), Err(Error::Vocab { .. })));
}

#[test]
fn length_distribution_is_normalized_with_distinct_top_k() {
    let m = S2utModel::new(small_cfg(), ModelKind::Nar, 15).unwrap();
    let d = m.length_predict(&m.encode(&rand_mel(20, 6, 16)).unwrap()).unwrap();
    assert_eq!(d.logp.len(), 12);
    assert!(log_sum_exp(&d.logp).abs() < 1e-9);
    let top = d.top_k(3);
    assert_eq!(top.len(), 3);
    assert!(top[0] != top[1] && top[1] != top[2] && top[0] != top[2]);
    for w in top.windows(2) {
        assert!(d.logp[w[0] - 1] >= d.logp[w[1] - 1]);
    }
    assert_eq!(top[0], d.argmax());
}

#[test]
fn ar_score_base_case_and_greedy_consistency() {
    let m = S2utModel::new(small_cfg(), ModelKind::Ar, 17).unwrap();
    let enc = m.encode(&rand_mel(24, 6, 18)).unwrap();
    let first = m.ar_next_logprobs(&enc, &[]).unwrap();
    let eos = m.specials().eos;
    assert!((m.ar_score(&enc, &[]).unwrap() - first[eos]).abs() < 1e-12);
    let units: Vec<usize> = (0..7).collect();
    let best = crate::nn::argmax(&first[..7]);
    assert!(first[best] >= first[units[3]]);

    let (greedy, steps) = m.ar_greedy(&enc).unwrap();
    assert_eq!(steps.len(), greedy.units.len() + 1);
    let scored = m.ar_score(&enc, &greedy.units).unwrap();
    assert!((scored - steps.iter().sum::<f64>()).abs() < 1e-9);
}

#[test]
fn beam_one_is_greedy_and_beam_selects_best_normalized() {
    let m = S2utModel::new(small_cfg(), ModelKind::Ar, 19).unwrap();
    for seed in 0..3 {
        let enc = m.encode(&rand_mel(16 + 4 * seed as usize, 6, 20 + seed)).unwrap();
        let (greedy, _) = m.ar_greedy(&enc).unwrap();
        let b1 = m.ar_beam_decode(&enc, 1).unwrap();
        assert_eq!(b1.best.units, greedy.units);
        assert!((b1.best.score - greedy.score).abs() < 1e-9);
        assert_eq!(b1.forward_passes, greedy.units.len() + 1);

        let b5 = m.ar_beam_decode(&enc, 5).unwrap();
        for h in &b5.finalists {
            assert!(b5.best.normalized() >= h.normalized());
            let tf = m.ar_score(&enc, &h.units).unwrap();
            assert!((tf - h.score).abs() < 1e-9, "cached and teacher-forced scores agree");
        }
        assert_eq!(m.ar_beam_decode(&enc, 5).unwrap().best, b5.best);
    }
}

#[test]
fn fixed_length_beam_emits_exactly_that_many_units() {
    let m = S2utModel::new(small_cfg(), ModelKind::Ar, 23).unwrap();
    let enc = m.encode(&rand_mel(20, 6, 3)).unwrap();
    for len in [1, 4, 9] {
        let out = m.ar_beam_decode_fixed(&enc, 3, len).unwrap();
        assert_eq!(out.forward_passes, len + 1);
        assert!(out.finalists.iter().all(|h| h.units.len() == len));
        let tf = m.ar_score(&enc, &out.best.units).unwrap();
        assert!((tf - out.best.score).abs() < 1e-9);
    }
    assert!(m.ar_beam_decode_fixed(&enc, 3, 0).is_err());
    assert!(matches!(m.ar_beam_decode_fixed(&enc, 3, 10_000), Err(crate::Error::Length { .. })));
}

#[test]
fn nar_loss_reads_only_masked_positions() {
    let cfg = small_cfg();
    let model = S2utModel::new(cfg.clone(), ModelKind::Nar, 21).unwrap();
    let pair = Pair {
        id: "a".into(),
        source: rand_mel(20, 6, 22),
        target: vec![1, 4, 2, 6, 0],
    };
    let masks = vec![vec![1, 3]];
    let mut f = Fwd::inference(model.params());
    let (_, losses) = batch_loss(&model, &mut f, &[&pair], &masks, 0.0).unwrap();
    let enc = model.encode(&pair.source).unwrap();
    let mask = model.specials().mask;
    let lp = model.nar_forward(&enc, &[1, mask, 2, mask, 0]).unwrap().0;
    let eps = cfg.label_smoothing;
    let manual: f64 = [(1usize, 4usize), (3, 6)]
        .iter()
        .map(|&(r, y)| {
            let row = lp.row(r);
            -(1.0 - eps) * row[y] - eps * row.iter().sum::<f64>() / row.len() as f64
        })
        .sum::<f64>()
        / 2.0;
    assert!((losses.token - manual).abs() < 1e-12);
}

#[test]
fn perfect_prediction_without_smoothing_has_zero_loss() {
    let mut t = Tape::inference();
    let mut logits = Mat::filled(2, 4, -300.0);
    logits.set(0, 1, 300.0);
    logits.set(1, 3, 300.0);
    let v = t.constant(logits);
    let lp = t.log_softmax(v);
    let l = t.smoothed_nll(lp, &[(0, 1), (1, 3)], 0.0, 2.0);
    assert!(t.value(l).item().abs() < 1e-12);
}

#[test]
fn training_memorizes_a_tiny_mapping() {
    let cfg = ModelConfig {
        dropout: 0.0,
        label_smoothing: 0.0,
        ..small_cfg()
    };
    let pairs = vec![
        Pair {
            id: "a".into(),
            source: rand_mel(16, 6, 30),
            target: vec![1, 2, 3],
        },
        Pair {
            id: "b".into(),
            source: rand_mel(24, 6, 31),
            target: vec![4, 4, 0, 6],
        },
    ];
    let tc = TrainConfig {
        epochs: 150,
        batch_size: 2,
        peak_lr: 3e-3,
        warmup: 20,
        ..TrainConfig::default()
    };
    let mut ar = S2utModel::new(cfg.clone(), ModelKind::Ar, 32).unwrap();
    let rep = train_model(&mut ar, &pairs, &tc).unwrap();
    assert!(rep.epoch_losses.last().unwrap().total < 0.05, "{:?}", rep.epoch_losses.last());
    for p in &pairs {
        let enc = ar.encode(&p.source).unwrap();
        assert_eq!(ar.ar_beam_decode(&enc, 3).unwrap().best.units, p.target);
    }
}

#[test]
fn training_rejects_overlong_targets() {
    let cfg = small_cfg();
    let mut m = S2utModel::new(cfg.clone(), ModelKind::Nar, 33).unwrap();
    let p = Pair {
        id: "x".into(),
        source: rand_mel(10, 6, 34),
        target: vec![0; 13],
    };
    let r = train_model(&mut m, &[p], &TrainConfig::default());
    assert!(matches!(r, Err(Error::Length { .. })));
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let m = S2utModel::new(small_cfg(), ModelKind::Nar, 35).unwrap();
    m.save(&path).unwrap();
    let back = S2utModel::load(&path).unwrap();
    assert_eq!(back.kind(), ModelKind::Nar);
    let x = rand_mel(12, 6, 36);
    assert_eq!(m.encode(&x).unwrap(), back.encode(&x).unwrap());
    std::fs::write(&path, b"TSCKjunk").unwrap();
    assert!(matches!(S2utModel::load(&path), Err(Error::Checkpoint(_))));
}
