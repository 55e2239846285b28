//! Unit determinism under perturbation: mean UER between the units of
//! original and perturbed audio, for the raw-mel baseline and for the
//! CTC-finetuned encoder.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth_speech::{gen_speech_corpus, SpeechCorpus, SpeechSpec, Split};
use crate::ctc::{finetune_encoder, pseudo_text, CtcExample, FinetuneConfig, FinetuneReport};
use crate::dsp::{mel_spectrogram, MelConfig, Waveform};
use crate::error::Result;
use crate::nn::Mat;
use crate::perturb::{compute_style_stats, enhance_chain, utterance_seed, PerturbMode, PerturbParams, StyleStats};
use crate::unitizer::{collapse_units, kmeans_train, quantize, unit_error_rate, Codebook, FeatureEncoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UerExperimentConfig {
    pub speech: SpeechSpec,
    pub corpus_seed: u64,
    pub num_units: usize,
    pub kmeans_iters: usize,
    pub finetune: FinetuneConfig,
    /// Perturbation seeds per held-out utterance and family.
    pub perturbations_per_utt: usize,
    pub eval_seed: u64,
    pub perturb: PerturbParams,
}

impl Default for UerExperimentConfig {
    fn default() -> Self {
        Self {
            speech: SpeechSpec::default(),
            corpus_seed: 1,
            num_units: 64,
            kmeans_iters: 30,
            finetune: FinetuneConfig::default(),
            perturbations_per_utt: 2,
            eval_seed: 99,
            perturb: PerturbParams::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct UnitDiagnostics {
    /// Mean collapsed unit-sequence length of the original held-out audio.
    pub mean_collapsed_len: f64,
    /// Distinct units used on held-out audio.
    pub units_used: usize,
    /// Fraction of held-out frames whose unit's majority phone is the true phone.
    pub phone_purity: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct UerReport {
    /// Mean UER (percent) per perturbation family.
    pub baseline: BTreeMap<String, f64>,
    pub tuned: BTreeMap<String, f64>,
    pub baseline_units: UnitDiagnostics,
    pub tuned_units: UnitDiagnostics,
    pub finetune: FinetuneReport,
    pub train_utterances: usize,
    pub test_utterances: usize,
}

impl UerReport {
    /// Relative reduction of the tuned UER against the baseline for `family`.
    pub fn relative_reduction(&self, family: &str) -> f64 {
        let b = self.baseline[family];
        if b == 0.0 {
            return 0.0;
        }
        (b - self.tuned[family]) / b
    }
}

/// A unit extractor: optional encoder plus codebook.
pub struct Unitizer<'a> {
    pub encoder: Option<&'a FeatureEncoder>,
    pub codebook: &'a Codebook,
}

impl Unitizer<'_> {
    pub fn features(&self, w: &Waveform) -> Result<Mat> {
        let mel = mel_spectrogram(w, &MelConfig::default())?;
        match self.encoder {
            None => Ok(mel.frames),
            Some(e) => e.encode(&mel.frames),
        }
    }

    pub fn units(&self, w: &Waveform) -> Result<Vec<usize>> {
        quantize(&self.features(w)?, self.codebook)
    }
}

fn stack_rows(mats: &[Mat]) -> Mat {
    let cols = mats[0].cols();
    let data: Vec<f64> = mats.iter().flat_map(|m| m.data().iter().copied()).collect();
    Mat::from_vec(data.len() / cols, cols, data)
}

fn diagnostics(u: &Unitizer<'_>, corpus: &SpeechCorpus, k: usize, num_phones: usize) -> Result<UnitDiagnostics> {
    let mut counts = vec![vec![0usize; num_phones]; k];
    let mut total_len = 0usize;
    let mut n = 0usize;
    for utt in corpus.split(Split::Test) {
        let units = u.units(&utt.audio)?;
        total_len += collapse_units(&units).len();
        n += 1;
        for (unit, &phone) in units.iter().zip(&utt.frame_labels) {
            counts[*unit][phone] += 1;
        }
    }
    let frames: usize = counts.iter().flatten().sum();
    let majority: usize = counts.iter().map(|c| c.iter().copied().max().unwrap_or(0)).sum();
    Ok(UnitDiagnostics {
        mean_collapsed_len: total_len as f64 / n.max(1) as f64,
        units_used: counts.iter().filter(|c| c.iter().any(|&x| x > 0)).count(),
        phone_purity: majority as f64 / frames.max(1) as f64,
    })
}

/// Mean UER per family over held-out utterances.
pub fn family_uer(
    u: &Unitizer<'_>,
    test: &[&Waveform],
    ids: &[&str],
    params: &PerturbParams,
    per_utt: usize,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for family in PerturbMode::FAMILIES {
        let (mut sum, mut n) = (0.0, 0usize);
        for (w, id) in test.iter().zip(ids) {
            let reference = u.units(w)?;
            for r in 0..per_utt {
                let s = utterance_seed(seed.wrapping_add(r as u64), &format!("{id}/{family}"));
                let pert = enhance_chain(w, params, family, &mut ChaCha8Rng::seed_from_u64(s))?;
                sum += unit_error_rate(&reference, &u.units(&pert)?)?;
                n += 1;
            }
        }
        out.insert(family.name().to_string(), sum / n.max(1) as f64);
    }
    Ok(out)
}

/// Everything needed to turn audio into units, baseline and tuned.
pub struct TrainedUnitizers {
    pub baseline: Codebook,
    pub stats: StyleStats,
    pub encoder: FeatureEncoder,
    pub tuned: Codebook,
    pub finetune: FinetuneReport,
}

impl TrainedUnitizers {
    pub fn baseline_unitizer(&self) -> Unitizer<'_> {
        Unitizer {
            encoder: None,
            codebook: &self.baseline,
        }
    }

    pub fn tuned_unitizer(&self) -> Unitizer<'_> {
        Unitizer {
            encoder: Some(&self.encoder),
            codebook: &self.tuned,
        }
    }
}

/// Mel k-means baseline, style statistics, CTC finetuning on the
/// baseline's pseudo-text, then k-means on the tuned features.
pub fn train_unitizers(
    train: &[(&str, &Waveform)],
    num_units: usize,
    kmeans_iters: usize,
    finetune: &FinetuneConfig,
    seed: u64,
) -> Result<TrainedUnitizers> {
    if train.is_empty() {
        return Err(crate::Error::EmptyInput("no training audio".into()));
    }
    let train_mels: Vec<Mat> = train
        .iter()
        .map(|(_, w)| mel_spectrogram(w, &MelConfig::default()).map(|m| m.frames))
        .collect::<Result<_>>()?;
    let baseline = kmeans_train(&stack_rows(&train_mels), num_units, kmeans_iters, seed)?.codebook;
    let audio: Vec<Waveform> = train.iter().map(|(_, w)| (*w).clone()).collect();
    let stats = compute_style_stats(&audio)?;
    log::info!("style stats f0 {:.1} Hz rms {:.4}", stats.mean_f0, stats.mean_rms);
    let examples: Vec<CtcExample> = train
        .iter()
        .map(|(id, w)| {
            Ok(CtcExample {
                utt_id: id.to_string(),
                audio: (*w).clone(),
                target: pseudo_text(w, &stats, &baseline)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut ft_cfg = finetune.clone();
    ft_cfg.num_units = num_units;
    let (encoder, report) = finetune_encoder(&examples, &ft_cfg)?;
    let tuned_feats: Vec<Mat> = train_mels.iter().map(|m| encoder.encode(m)).collect::<Result<_>>()?;
    let tuned = kmeans_train(&stack_rows(&tuned_feats), num_units, kmeans_iters, seed)?.codebook;
    Ok(TrainedUnitizers {
        baseline,
        stats,
        encoder,
        tuned,
        finetune: report,
    })
}

pub fn run_uer_experiment(cfg: &UerExperimentConfig) -> Result<UerReport> {
    let corpus = gen_speech_corpus(&cfg.speech, cfg.corpus_seed)?;
    let train: Vec<_> = corpus.split(Split::Train).collect();
    let test: Vec<_> = corpus.split(Split::Test).collect();
    log::info!("uer: {} train / {} test utterances", train.len(), test.len());
    let inputs: Vec<(&str, &Waveform)> = train.iter().map(|u| (u.utt_id.as_str(), &u.audio)).collect();
    let t = train_unitizers(&inputs, cfg.num_units, cfg.kmeans_iters, &cfg.finetune, cfg.corpus_seed)?;
    let base_u = t.baseline_unitizer();
    let tuned_u = t.tuned_unitizer();
    let test_audio: Vec<&Waveform> = test.iter().map(|u| &u.audio).collect();
    let ids: Vec<&str> = test.iter().map(|u| u.utt_id.as_str()).collect();
    let n_phones = cfg.speech.num_phones;
    Ok(UerReport {
        baseline: family_uer(&base_u, &test_audio, &ids, &cfg.perturb, cfg.perturbations_per_utt, cfg.eval_seed)?,
        tuned: family_uer(&tuned_u, &test_audio, &ids, &cfg.perturb, cfg.perturbations_per_utt, cfg.eval_seed)?,
        baseline_units: diagnostics(&base_u, &corpus, cfg.num_units, n_phones)?,
        tuned_units: diagnostics(&tuned_u, &corpus, cfg.num_units, n_phones)?,
        finetune: t.finetune.clone(),
        train_utterances: train.len(),
        test_utterances: test.len(),
    })
}
