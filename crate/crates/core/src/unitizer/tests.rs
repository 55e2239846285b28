use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dsp::{mel_spectrogram, MelConfig, Waveform};

fn col(v: &[f64]) -> Mat {
    Mat::from_vec(v.len(), 1, v.to_vec())
}

#[test]
fn raw_features_pass_through_and_encoder_keeps_frame_count() {
    let w = Waveform::sine(300.0, 0.3, 1.0, 16000).unwrap();
    let mel = mel_spectrogram(&w, &MelConfig::default()).unwrap();
    assert_eq!(encode_features(&mel, None).unwrap(), mel.frames);
    let enc = FeatureEncoder::new(EncoderConfig::default(), 3).unwrap();
    let a = encode_features(&mel, Some(&enc)).unwrap();
    assert_eq!(a.shape(), (100, 80));
    assert_eq!(a, encode_features(&mel, Some(&enc)).unwrap());
    assert!(a.is_finite());
}

#[test]
fn encoder_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("enc.bin");
    let cfg = EncoderConfig { hidden: 8, feature_dim: 6, ..EncoderConfig::default() };
    let enc = FeatureEncoder::new(cfg, 11).unwrap();
    enc.save(&p).unwrap();
    let back = FeatureEncoder::load(&p).unwrap();
    let x = Mat::from_vec(7, 80, (0..560).map(|i| (i as f64 * 0.37).sin()).collect());
    assert_eq!(enc.encode(&x).unwrap(), back.encode(&x).unwrap());
}

#[test]
fn kmeans_symmetric_optimum() {
    let r = kmeans_train(&col(&[0.0, 0.0, 10.0, 10.0]), 2, 10, 1).unwrap();
    let mut c: Vec<f64> = r.codebook.centroids().data().to_vec();
    c.sort_by(f64::total_cmp);
    assert_eq!(c, vec![0.0, 10.0]);
    assert_eq!(*r.inertia.last().unwrap(), 0.0);
}

#[test]
fn kmeans_with_k_equal_to_distinct_points_has_zero_inertia() {
    let pts = [1.0, 4.0, 4.0, 9.0, 16.0, 1.0];
    let r = kmeans_train(&col(&pts), 4, 20, 5).unwrap();
    assert_eq!(*r.inertia.last().unwrap(), 0.0);
}

#[test]
fn kmeans_rejects_too_few_distinct_frames() {
    assert!(matches!(kmeans_train(&col(&[1.0, 1.0, 2.0]), 3, 5, 0), Err(Error::Clustering(_))));
    assert!(matches!(kmeans_train(&col(&[1.0, 2.0]), 1, 5, 0), Err(Error::Clustering(_))));
}

#[test]
fn quantize_rules() {
    let cb = Codebook::new(col(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
    assert_eq!(quantize(&col(&[3.0]), &cb).unwrap(), vec![3]);
    let tie = Codebook::new(Mat::from_rows(&[
        vec![9.0, 9.0],
        vec![9.0, 8.0],
        vec![0.0, 0.0],
        vec![7.0, 7.0],
        vec![8.0, 9.0],
        vec![2.0, 0.0],
    ]))
    .unwrap();
    assert_eq!(quantize(&Mat::from_rows(&[vec![1.0, 0.0]]), &tie).unwrap(), vec![2]);
    assert_eq!(quantize(cb.centroids(), &cb).unwrap(), (0..6).collect::<Vec<_>>());
    assert!(matches!(quantize(&Mat::zeros(2, 3), &cb), Err(Error::Shape(_))));
}

#[test]
fn codebook_json_round_trip_and_validation() {
    let cb = Codebook::new(Mat::from_rows(&[vec![0.5, 1.0], vec![-2.0, 3.0]])).unwrap();
    let s = cb.to_json().unwrap();
    assert!(s.contains("\"K\":2"));
    assert_eq!(Codebook::from_json(&s).unwrap(), cb);
    assert!(Codebook::new(Mat::from_rows(&[vec![1.0], vec![1.0]])).is_err());
    assert!(Codebook::new(Mat::from_rows(&[vec![1.0]])).is_err());
}

#[test]
fn collapse_examples() {
    assert_eq!(collapse_units(&[5, 5, 7, 7, 7, 5]), vec![5, 7, 5]);
    assert_eq!(collapse_units(&[]), Vec::<usize>::new());
    assert_eq!(collapse_units(&[1, 2, 1]), vec![1, 2, 1]);
}

#[test]
fn uer_examples() {
    assert_eq!(unit_error_rate(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
    assert!((unit_error_rate(&[1, 2, 3], &[1, 3]).unwrap() - 100.0 / 3.0).abs() < 1e-12);
    assert_eq!(unit_error_rate(&[1, 2], &[3, 4]).unwrap(), 100.0);
    assert!(matches!(unit_error_rate(&[], &[1]), Err(Error::Metric(_))));
    // Repeats are not errors.
    assert_eq!(unit_error_rate(&[1, 1, 2], &[1, 2, 2, 2]).unwrap(), 0.0);
}

/// Independent recursive edit distance.
fn edit_oracle(a: &[usize], b: &[usize]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = edit_oracle(ra, rb) + usize::from(x != y);
            sub.min(edit_oracle(ra, b) + 1).min(edit_oracle(a, rb) + 1)
        }
    }
}

proptest! {
    #[test]
    fn levenshtein_matches_recursive_oracle(
        a in prop::collection::vec(0usize..4, 0..7),
        b in prop::collection::vec(0usize..4, 0..7),
    ) {
        prop_assert_eq!(levenshtein(&a, &b), edit_oracle(&a, &b));
    }

    #[test]
    fn uer_error_counts_are_symmetric(
        a in prop::collection::vec(0usize..5, 1..20),
        b in prop::collection::vec(0usize..5, 1..20),
    ) {
        let (ca, cb) = (collapse_units(&a).len() as f64, collapse_units(&b).len() as f64);
        let ab = unit_error_rate(&a, &b).unwrap() * ca;
        let ba = unit_error_rate(&b, &a).unwrap() * cb;
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert_eq!(unit_error_rate(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn collapse_is_idempotent_and_never_lengthens(u in prop::collection::vec(0usize..4, 0..30)) {
        let c = collapse_units(&u);
        prop_assert!(c.len() <= u.len());
        prop_assert_eq!(collapse_units(&c), c.clone());
        prop_assert!(c.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn lloyd_inertia_never_increases(seed in 0u64..50, k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let r = kmeans_train(&Mat::from_rows(&pts), k, 30, seed).unwrap();
        for w in r.inertia.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", r.inertia);
        }
        let q1 = quantize(&Mat::from_rows(&pts), &r.codebook).unwrap();
        let q2 = quantize(&Mat::from_rows(&pts), &r.codebook).unwrap();
        prop_assert_eq!(q1, q2);
    }
}
