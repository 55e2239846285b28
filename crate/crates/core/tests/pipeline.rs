//! Small end-to-end runs through the public API and on-disk formats.

use transpeech::harness::experiments::distill_pair_set;
use transpeech::harness::manifest::{read_alignments, write_speech_corpus, Manifest, MANIFEST_FILE};
use transpeech::harness::pairs::{gen_pair_corpus, load_pair_set, save_pair_set, PairTaskSpec};
use transpeech::harness::synth_speech::{gen_speech_corpus, SpeechSpec, Split};
use transpeech::harness::uer::Unitizer;
use transpeech::maskpredict::{decode_source, DecodeConfig};
use transpeech::nn::Mat;
use transpeech::seqmodel::{train_model, ModelConfig, ModelKind, S2utModel, TrainConfig};
use transpeech::dsp::{mel_spectrogram, MelConfig};
use transpeech::unitizer::{collapse_units, encode_features, kmeans_train};

fn small_task() -> PairTaskSpec {
    PairTaskSpec {
        num_pairs: 40,
        feature_dim: 12,
        source_len: (3, 5),
        multimodality: 2,
        repeat_fraction: 0.25,
        ..PairTaskSpec::default()
    }
}

fn small_model(task: &PairTaskSpec) -> ModelConfig {
    ModelConfig {
        input_dim: task.feature_dim,
        encoder_blocks: 1,
        decoder_blocks: 1,
        hidden: 16,
        heads: 2,
        ffn_dim: 32,
        conv_kernel: 3,
        subsample_kernel: 3,
        unit_vocab: task.unit_vocab,
        max_len: 16,
        length_bins: 16,
        ..ModelConfig::default()
    }
}

#[test]
fn pair_set_trains_saves_reloads_and_distills() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task();
    let corpus = gen_pair_corpus(&task, 3).unwrap();
    save_pair_set(dir.path(), &corpus.examples).unwrap();
    let examples = load_pair_set(dir.path()).unwrap();
    assert_eq!(examples, corpus.examples);

    let train: Vec<_> = examples.iter().filter(|e| e.split == Split::Train).map(|e| e.pair.clone()).collect();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut ar = S2utModel::new(small_model(&task), ModelKind::Ar, 1).unwrap();
    let mut nar = S2utModel::new(small_model(&task), ModelKind::Nar, 2).unwrap();
    let r = train_model(&mut ar, &train, &cfg).unwrap();
    assert!(r.updates > 0 && r.epoch_losses.iter().all(|l| l.total.is_finite()));
    train_model(&mut nar, &train, &cfg).unwrap();

    let path = dir.path().join("nar.tsck");
    nar.save(&path).unwrap();
    let back = S2utModel::load(&path).unwrap();
    let dc = DecodeConfig {
        length_beam: 3,
        npd: true,
        ..DecodeConfig::default()
    };
    for e in examples.iter().filter(|e| e.split == Split::Test) {
        let a = decode_source(&nar, Some(&ar), &e.pair.source, &dc).unwrap().0;
        let b = decode_source(&back, Some(&ar), &e.pair.source, &dc).unwrap().0;
        assert_eq!(a, b);
        assert!(!a.is_empty() && a.iter().all(|&u| u < task.unit_vocab));
    }

    let (distilled, report) = distill_pair_set(&ar, &examples, 2).unwrap();
    let kept = distilled.iter().filter(|e| e.split == Split::Train).count();
    assert_eq!(kept + report.dropped.len(), train.len());
    // Equal sources now share one target.
    let mut by_source: std::collections::HashMap<Vec<u64>, &Vec<usize>> = Default::default();
    for e in distilled.iter().filter(|e| e.split == Split::Train) {
        let key: Vec<u64> = e.pair.source.data().iter().map(|v| v.to_bits()).collect();
        let prev = by_source.entry(key).or_insert(&e.pair.target);
        assert_eq!(*prev, &e.pair.target);
    }
}

#[test]
fn speech_corpus_round_trips_through_disk_and_unitizes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SpeechSpec {
        num_utterances: 8,
        ..SpeechSpec::default()
    };
    let corpus = gen_speech_corpus(&spec, 4).unwrap();
    write_speech_corpus(&corpus, dir.path()).unwrap();
    let m = Manifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.rows.len(), 8);
    let alignments = read_alignments(dir.path()).unwrap();

    let mut rows = Vec::new();
    let audio: Vec<_> = m.rows.iter().map(|r| m.load_audio(r).unwrap()).collect();
    for w in &audio {
        let mel = mel_spectrogram(w, &MelConfig::default()).unwrap();
        let f = encode_features(&mel, None).unwrap();
        rows.extend(f.iter_rows().map(<[f64]>::to_vec));
    }
    let cb = kmeans_train(&Mat::from_rows(&rows), 10, 10, 0).unwrap().codebook;
    let u = Unitizer {
        encoder: None,
        codebook: &cb,
    };
    for ((w, a), orig) in audio.iter().zip(&alignments).zip(&corpus.utterances) {
        // 16-bit storage moves samples by at most half a quantization step.
        let err = w.samples().iter().zip(orig.audio.samples()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err <= 0.5 / 32767.0 + 1e-12, "{err}");
        let units = u.units(w).unwrap();
        assert_eq!(units.len(), a.frame_labels.len());
        assert!(units.iter().all(|&k| k < 10));
        assert!(collapse_units(&units).len() <= units.len());
    }
}
