use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;
use crate::seqmodel::{train_model, ModelConfig, TrainConfig};

fn cfg() -> ModelConfig {
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

fn rand_mel(rows: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_vec(rows, 6, (0..rows * 6).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn nar(seed: u64) -> S2utModel {
    S2utModel::new(cfg(), ModelKind::Nar, seed).unwrap()
}

#[test]
fn single_position_is_always_masked() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        assert_eq!(sample_training_mask(1, &mut rng).unwrap(), vec![0]);
    }
    assert!(sample_training_mask(0, &mut rng).is_err());
}

#[test]
fn mask_count_is_uniform_chi_squared() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = 100_000;
    let mut counts = [0usize; 10];
    let mut position_hits = [0usize; 10];
    for _ in 0..draws {
        let m = sample_training_mask(10, &mut rng).unwrap();
        counts[m.len() - 1] += 1;
        for p in m {
            position_hits[p] += 1;
        }
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2} p {p} counts {counts:?}");
    // Every position is equally likely: expected hits = draws * E[n] / N.
    let e = draws as f64 * 5.5 / 10.0;
    let chi2: f64 = position_hits.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2) > 0.01, "{position_hits:?}");
}

#[test]
fn mask_sampling_is_seeded() {
    let a = sample_training_mask(30, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = sample_training_mask(30, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn schedule_values() {
    let n: Vec<usize> = (1..5).map(|t| mask_schedule(10, 5, t).unwrap()).collect();
    assert_eq!(n, vec![8, 6, 4, 2]);
    assert_eq!(mask_schedule(3, 10, 9).unwrap(), 1);
    assert_eq!(mask_schedule(7, 5, 0).unwrap(), 7);
    assert!(matches!(mask_schedule(7, 5, 5), Err(Error::Parameter(_))));
}

#[test]
fn one_iteration_is_one_shot() {
    let m = nar(3);
    let enc = m.encode(&rand_mel(20, 4)).unwrap();
    let (out, trace) = mask_predict_decode(&m, &enc, 6, 1).unwrap();
    assert_eq!(trace.forward_passes, 1);
    assert_eq!(trace.candidates[0].iterations.len(), 1);
    let lp = m.nar_forward(&enc, &[m.specials().mask; 6]).unwrap().0;
    let expect: Vec<usize> = lp.iter_rows().map(argmax).collect();
    assert_eq!(out, expect);
}

#[test]
fn refinement_follows_schedule_and_keeps_scores() {
    let m = nar(5);
    let enc = m.encode(&rand_mel(28, 6)).unwrap();
    let (out, trace) = mask_predict_decode(&m, &enc, 10, 5).unwrap();
    assert_eq!(trace.forward_passes, 5);
    assert!(out.iter().all(|&u| u < 7));
    let its = &trace.candidates[0].iterations;
    let sizes: Vec<usize> = its.iter().map(|i| i.masked.len()).collect();
    assert_eq!(sizes, vec![10, 8, 6, 4, 2]);
    for w in its.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        for p in 0..10 {
            if !cur.masked.contains(&p) {
                assert_eq!(prev.scores[p], cur.scores[p], "kept position {p} changed score");
            }
        }
        // The remasked set is the lowest-scoring positions of the previous pass.
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| prev.scores[a].total_cmp(&prev.scores[b]).then(a.cmp(&b)));
        let mut want = order[..cur.masked.len()].to_vec();
        want.sort_unstable();
        assert_eq!(cur.masked, want);
    }
    for it in its {
        assert!(it.scores.iter().all(|&s| s > 0.0 && s <= 1.0));
    }
}

#[test]
fn length_beam_one_matches_fixed_length_decode() {
    let m = nar(7);
    let enc = m.encode(&rand_mel(24, 8)).unwrap();
    let n = m.length_predict(&enc).unwrap().argmax();
    let (fixed, _) = mask_predict_decode(&m, &enc, n, 4).unwrap();
    let cfg = DecodeConfig {
        iterations: 4,
        length_beam: 1,
        ..DecodeConfig::default()
    };
    let (beam, trace) = length_beam_decode(&m, &enc, &cfg, None).unwrap();
    assert_eq!(beam, fixed);
    assert_eq!(trace.forward_passes, 4);
}

#[test]
fn batched_candidates_equal_sequential_and_selection_rule() {
    let m = nar(9);
    let enc = m.encode(&rand_mel(30, 10)).unwrap();
    let cfg = DecodeConfig {
        iterations: 3,
        length_beam: 4,
        ..DecodeConfig::default()
    };
    let (out, trace) = length_beam_decode(&m, &enc, &cfg, None).unwrap();
    assert_eq!(trace.forward_passes, 3, "K candidates share each pass");
    for c in &trace.candidates {
        let mut s = m.nar_session(&enc).unwrap();
        let seq = mask_predict_batch(&mut s, m.specials().mask, &[c.length], &cfg).unwrap();
        assert_eq!(seq[0].output, c.output);
        assert!((seq[0].avg_log_score - c.avg_log_score).abs() < 1e-12);
    }
    let best = &trace.candidates[trace.selected];
    assert_eq!(best.output, out);
    assert!(trace.candidates.iter().all(|c| best.avg_log_score >= c.avg_log_score));
    let (again, trace2) = length_beam_decode(&m, &enc, &cfg, None).unwrap();
    assert_eq!(again, out);
    assert_eq!(trace2, trace);
}

#[test]
fn npd_picks_the_teacher_favourite() {
    let m = nar(11);
    let teacher = S2utModel::new(cfg(), ModelKind::Ar, 12).unwrap();
    let src = rand_mel(26, 13);
    let enc = m.encode(&src).unwrap();
    let tenc = teacher.encode(&src).unwrap();
    let (idx, scores) = npd_select(&teacher, &tenc, &[vec![1, 2]]).unwrap();
    assert_eq!((idx, scores.len()), (0, 1));

    let cfg = DecodeConfig {
        iterations: 3,
        length_beam: 5,
        npd: true,
        ..DecodeConfig::default()
    };
    let (out, trace) = length_beam_decode(&m, &enc, &cfg, Some((&teacher, &tenc))).unwrap();
    assert_eq!(trace.teacher_passes, 1);
    let sel = trace.candidates[trace.selected].teacher_score.unwrap();
    for c in &trace.candidates {
        let direct = teacher.ar_score(&tenc, &c.output).unwrap() / (c.output.len() + 1) as f64;
        assert!((c.teacher_score.unwrap() - direct).abs() < 1e-9);
        assert!(sel >= direct);
    }
    assert_eq!(out, trace.output);
    assert!(length_beam_decode(&m, &enc, &cfg, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn passes_equal_iterations(n in 1usize..12, t in 1usize..7, k in 1usize..5, seed in 0u64..4) {
        let m = nar(20 + seed);
        let enc = m.encode(&rand_mel(12 + n, seed)).unwrap();
        let (out, trace) = mask_predict_decode(&m, &enc, n, t).unwrap();
        prop_assert_eq!(trace.forward_passes, t);
        prop_assert_eq!(out.len(), n);
        let sizes: Vec<usize> = trace.candidates[0].iterations.iter().map(|i| i.masked.len()).collect();
        // Strictly decreasing while T <= N (steps of N/T >= 1); with more
        // iterations than positions the floor makes it plateau.
        for w in sizes.windows(2) {
            prop_assert!(w[1] <= w[0]);
            if t <= n {
                prop_assert!(w[1] < w[0] || w[1] == 1);
            }
        }
        let cfg = DecodeConfig { iterations: t, length_beam: k, ..DecodeConfig::default() };
        let (_, tr) = length_beam_decode(&m, &enc, &cfg, None).unwrap();
        prop_assert_eq!(tr.forward_passes, t);
        prop_assert_eq!(tr.candidates.len(), k);
    }

    #[test]
    fn single_remask_visits_every_position(n in 1usize..9, extra in 0usize..3, seed in 0u64..4) {
        let m = nar(30 + seed);
        let enc = m.encode(&rand_mel(16, seed + 7)).unwrap();
        let cfg = DecodeConfig { iterations: n + 1 + extra, single_remask: true, ..DecodeConfig::default() };
        let mut s = m.nar_session(&enc).unwrap();
        let c = mask_predict_batch(&mut s, m.specials().mask, &[n], &cfg).unwrap().remove(0);
        let mut seen = vec![false; n];
        for it in &c.iterations[1..] {
            prop_assert_eq!(it.masked.len(), 1);
            seen[it.masked[0]] = true;
        }
        prop_assert!(seen.iter().all(|&v| v));
    }
}

fn memorized_teacher(pairs: &[Pair]) -> S2utModel {
    let c = ModelConfig {
        label_smoothing: 0.0,
        ..cfg()
    };
    let mut t = S2utModel::new(c, ModelKind::Ar, 40).unwrap();
    let tc = TrainConfig {
        epochs: 200,
        batch_size: pairs.len(),
        peak_lr: 3e-3,
        warmup: 20,
        ..TrainConfig::default()
    };
    train_model(&mut t, pairs, &tc).unwrap();
    t
}

#[test]
fn distilling_a_deterministic_corpus_with_a_perfect_teacher_is_identity() {
    let pairs: Vec<Pair> = (0..3)
        .map(|i| Pair {
            id: format!("u{i}"),
            source: rand_mel(14 + 5 * i, 50 + i as u64),
            target: vec![i, (i + 2) % 7, 6, i],
        })
        .collect();
    let teacher = memorized_teacher(&pairs);
    let d = distill_corpus(&teacher, &pairs, 5).unwrap();
    assert!(d.dropped.is_empty());
    assert_eq!(d.pairs, pairs);
}

#[test]
fn distillation_leaves_one_target_per_source() {
    let src = rand_mel(20, 60);
    let pairs = vec![
        Pair {
            id: "a".into(),
            source: src.clone(),
            target: vec![1, 2, 3],
        },
        Pair {
            id: "b".into(),
            source: src,
            target: vec![4, 5, 6],
        },
        Pair {
            id: "c".into(),
            source: rand_mel(18, 61),
            target: vec![2, 2],
        },
    ];
    let teacher = S2utModel::new(cfg(), ModelKind::Ar, 62).unwrap();
    let d = distill_corpus(&teacher, &pairs, 3).unwrap();
    let kept: Vec<&Pair> = d.pairs.iter().filter(|p| p.id != "c").collect();
    assert_eq!(d.pairs.len() + d.dropped.len(), pairs.len());
    if kept.len() == 2 {
        assert_eq!(kept[0].target, kept[1].target);
        assert_eq!(kept[0].source, kept[1].source);
    }
    assert!(matches!(distill_corpus(&nar(1), &pairs, 3), Err(Error::Parameter(_))));
}
