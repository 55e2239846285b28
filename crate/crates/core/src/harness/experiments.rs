//! Toy translation experiments on the synthetic pair task: end-to-end
//! quality of the AR teacher and the NAR student, sequence-level
//! distillation, and the refinement/length-beam/rescoring sweep.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bleu::{corpus_bleu_multi, token_accuracy};
use super::pairs::{gen_pair_corpus, PairCorpus, PairExample, PairTaskSpec};
use super::synth_speech::Split;
use crate::error::{Error, Result};
use crate::maskpredict::{decode_source, distill_corpus, DecodeConfig};
use crate::seqmodel::{train_model, ModelConfig, ModelKind, Pair, S2utModel, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub task: PairTaskSpec,
    pub corpus_seed: u64,
    pub model: ModelConfig,
    pub ar_train: TrainConfig,
    pub nar_train: TrainConfig,
    pub ar_beam: usize,
    /// NAR decoding used for the headline BLEU.
    pub decode: DecodeConfig,
    /// Held-out examples scored (all when `None`).
    pub eval_limit: Option<usize>,
    pub model_seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let task = PairTaskSpec::default();
        Self {
            model: ModelConfig {
                input_dim: task.feature_dim,
                unit_vocab: task.unit_vocab,
                max_len: 64,
                length_bins: 64,
                ..ModelConfig::default()
            },
            task,
            corpus_seed: 1,
            ar_train: TrainConfig {
                epochs: 20,
                peak_lr: 2e-3,
                ..TrainConfig::default()
            },
            nar_train: TrainConfig {
                epochs: 40,
                peak_lr: 4e-3,
                ..TrainConfig::default()
            },
            ar_beam: 5,
            decode: DecodeConfig {
                iterations: 5,
                length_beam: 3,
                ..DecodeConfig::default()
            },
            eval_limit: None,
            model_seed: 0,
        }
    }
}

impl ToyConfig {
    /// The ambiguous variant: two target tables drawn 50/50 per sentence,
    /// and a fifth of training recordings repeated with a fresh draw.
    pub fn multimodal() -> Self {
        let d = Self::default();
        Self {
            task: PairTaskSpec {
                multimodality: 2,
                weights: (0.5, 0.5),
                repeat_fraction: 0.2,
                ..d.task.clone()
            },
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        if self.model.input_dim != self.task.feature_dim || self.model.unit_vocab != self.task.unit_vocab {
            return Err(Error::Config("model input_dim/unit_vocab must match the task".into()));
        }
        self.decode.validate(self.model.max_len)
    }
}

/// One decoded output, as stored in hypothesis files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub units: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Multi-reference corpus BLEU.
    pub bleu: f64,
    /// Multi-reference position-wise token accuracy, percent.
    pub accuracy: f64,
}

pub fn score(examples: &[&PairExample], hyps: &[Vec<usize>]) -> Result<Scores> {
    let refs: Vec<Vec<Vec<usize>>> = examples.iter().map(|e| e.references.clone()).collect();
    Ok(Scores {
        bleu: corpus_bleu_multi(&refs, hyps)?.bleu,
        accuracy: token_accuracy(&refs, hyps)?,
    })
}

pub fn decode_ar_all(model: &S2utModel, examples: &[&PairExample], beam: usize) -> Result<Vec<Vec<usize>>> {
    examples
        .iter()
        .map(|e| Ok(model.ar_beam_decode(&model.encode(&e.pair.source)?, beam)?.best.units))
        .collect()
}

pub fn decode_nar_all(
    model: &S2utModel,
    teacher: Option<&S2utModel>,
    examples: &[&PairExample],
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<usize>>> {
    examples
        .iter()
        .map(|e| Ok(decode_source(model, teacher, &e.pair.source, cfg)?.0))
        .collect()
}

fn held_out<'c>(corpus: &'c PairCorpus, limit: Option<usize>) -> Vec<&'c PairExample> {
    corpus.split(Split::Test).take(limit.unwrap_or(usize::MAX)).collect()
}

fn train(cfg: &ToyConfig, kind: ModelKind, pairs: &[Pair], seed_offset: u64) -> Result<(S2utModel, TrainReport)> {
    let mut m = S2utModel::new(cfg.model.clone(), kind, cfg.model_seed + seed_offset)?;
    let tc = match kind {
        ModelKind::Ar => &cfg.ar_train,
        ModelKind::Nar => &cfg.nar_train,
    };
    let r = train_model(&mut m, pairs, tc)?;
    Ok((m, r))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub ar: Scores,
    pub nar: Scores,
    pub ar_train: TrainReport,
    pub nar_train: TrainReport,
    pub test_examples: usize,
    pub seconds: f64,
}

pub struct EndToEnd {
    pub report: EndToEndReport,
    pub ar: S2utModel,
    pub nar: S2utModel,
}

/// Trains an AR and a NAR model on the raw corpus and scores both.
pub fn run_end_to_end(cfg: &ToyConfig) -> Result<EndToEnd> {
    cfg.validate()?;
    let start = Instant::now();
    let corpus = gen_pair_corpus(&cfg.task, cfg.corpus_seed)?;
    let pairs = corpus.pairs(Split::Train);
    let test = held_out(&corpus, cfg.eval_limit);
    let (ar, ar_train) = train(cfg, ModelKind::Ar, &pairs, 0)?;
    let ar_scores = score(&test, &decode_ar_all(&ar, &test, cfg.ar_beam)?)?;
    log::info!("end-to-end: AR BLEU {:.2}", ar_scores.bleu);
    let (nar, nar_train) = train(cfg, ModelKind::Nar, &pairs, 1)?;
    let nar_scores = score(&test, &decode_nar_all(&nar, Some(&ar), &test, &cfg.decode)?)?;
    log::info!("end-to-end: NAR BLEU {:.2}", nar_scores.bleu);
    Ok(EndToEnd {
        report: EndToEndReport {
            ar: ar_scores,
            nar: nar_scores,
            ar_train,
            nar_train,
            test_examples: test.len(),
            seconds: start.elapsed().as_secs_f64(),
        },
        ar,
        nar,
    })
}

/// How many distinct targets each distinct source carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetMultiplicity {
    pub sources: usize,
    /// Sources seen more than once.
    pub repeated: usize,
    pub max_targets: usize,
    /// Repeated sources with more than one distinct target.
    pub ambiguous: usize,
}

/// Groups by identical source features.
pub fn target_multiplicity(pairs: &[Pair]) -> TargetMultiplicity {
    let mut groups: HashMap<Vec<u64>, (usize, HashSet<&[usize]>)> = HashMap::new();
    for p in pairs {
        let key = p.source.data().iter().map(|v| v.to_bits()).collect();
        let g = groups.entry(key).or_default();
        g.0 += 1;
        g.1.insert(&p.target);
    }
    TargetMultiplicity {
        sources: groups.len(),
        repeated: groups.values().filter(|g| g.0 > 1).count(),
        max_targets: groups.values().map(|g| g.1.len()).max().unwrap_or(0),
        ambiguous: groups.values().filter(|g| g.1.len() > 1).count(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistillationReport {
    pub raw_multiplicity: TargetMultiplicity,
    pub distilled_multiplicity: TargetMultiplicity,
    pub dropped: usize,
    pub teacher: Scores,
    /// NAR decoded naively (T=5, K=1, no rescoring).
    pub nar_raw: Scores,
    pub nar_distilled: Scores,
    pub distill_seconds: f64,
    pub seconds: f64,
}

pub struct Distillation {
    pub report: DistillationReport,
    pub corpus: PairCorpus,
    pub teacher: S2utModel,
    pub nar_raw: S2utModel,
    pub nar_distilled: S2utModel,
}

pub fn naive_decode() -> DecodeConfig {
    DecodeConfig {
        iterations: 5,
        length_beam: 1,
        ..DecodeConfig::default()
    }
}

/// AR teacher on the raw corpus, beam-search distillation of the training
/// targets, then one NAR on the raw and one on the distilled targets.
pub fn run_distillation(cfg: &ToyConfig) -> Result<Distillation> {
    cfg.validate()?;
    let start = Instant::now();
    let corpus = gen_pair_corpus(&cfg.task, cfg.corpus_seed)?;
    let raw = corpus.pairs(Split::Train);
    let test = held_out(&corpus, cfg.eval_limit);
    let (teacher, _) = train(cfg, ModelKind::Ar, &raw, 0)?;
    let teacher_scores = score(&test, &decode_ar_all(&teacher, &test, cfg.ar_beam)?)?;
    log::info!("distillation: teacher BLEU {:.2}", teacher_scores.bleu);
    let t = Instant::now();
    let distilled = distill_corpus(&teacher, &raw, cfg.ar_beam)?;
    let distill_seconds = t.elapsed().as_secs_f64();
    let (nar_raw, _) = train(cfg, ModelKind::Nar, &raw, 1)?;
    let (nar_distilled, _) = train(cfg, ModelKind::Nar, &distilled.pairs, 1)?;
    let naive = naive_decode();
    let report = DistillationReport {
        raw_multiplicity: target_multiplicity(&raw),
        distilled_multiplicity: target_multiplicity(&distilled.pairs),
        dropped: distilled.dropped.len(),
        teacher: teacher_scores,
        nar_raw: score(&test, &decode_nar_all(&nar_raw, None, &test, &naive)?)?,
        nar_distilled: score(&test, &decode_nar_all(&nar_distilled, None, &test, &naive)?)?,
        distill_seconds,
        seconds: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "distillation: NAR accuracy raw {:.2} distilled {:.2}",
        report.nar_raw.accuracy,
        report.nar_distilled.accuracy
    );
    Ok(Distillation {
        report,
        corpus,
        teacher,
        nar_raw,
        nar_distilled,
    })
}

/// Distills the training split of a stored pair set; held-out examples
/// are kept unchanged, dropped sources are removed.
pub fn distill_pair_set(
    teacher: &S2utModel,
    examples: &[PairExample],
    beam: usize,
) -> Result<(Vec<PairExample>, crate::maskpredict::DistillReport)> {
    let train: Vec<Pair> = examples
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| e.pair.clone())
        .collect();
    let report = distill_corpus(teacher, &train, beam)?;
    let mut new_targets: HashMap<&str, &Vec<usize>> =
        report.pairs.iter().map(|p| (p.id.as_str(), &p.target)).collect();
    let out = examples
        .iter()
        .filter_map(|e| {
            if e.split != Split::Train {
                return Some(e.clone());
            }
            new_targets.remove(e.pair.id.as_str()).map(|t| {
                let mut e = e.clone();
                e.pair.target = t.clone();
                e
            })
        })
        .collect();
    Ok((out, report))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementPoint {
    pub iterations: usize,
    pub length_beam: usize,
    pub npd: bool,
    pub scores: Scores,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementReport {
    /// BLEU against T with K = 1.
    pub by_iterations: Vec<RefinementPoint>,
    /// T = `beam_iterations` with K = 1, K = 5 and K = 5 + NPD.
    pub k1: RefinementPoint,
    pub k5: RefinementPoint,
    pub k5_npd: RefinementPoint,
}

impl RefinementReport {
    pub fn bleu_at(&self, iterations: usize) -> Option<f64> {
        self.by_iterations
            .iter()
            .find(|p| p.iterations == iterations)
            .map(|p| p.scores.bleu)
    }
}

/// Scores mask-predict for every T in `iterations` (K=1), then K=1/5 and
/// rescoring at T=`beam_iterations`.
pub fn run_refinement(
    nar: &S2utModel,
    teacher: &S2utModel,
    test: &[&PairExample],
    iterations: &[usize],
    beam_iterations: usize,
) -> Result<RefinementReport> {
    let point = |t: usize, k: usize, npd: bool| -> Result<RefinementPoint> {
        let cfg = DecodeConfig {
            iterations: t,
            length_beam: k,
            npd,
            ..DecodeConfig::default()
        };
        let hyps = decode_nar_all(nar, Some(teacher), test, &cfg)?;
        Ok(RefinementPoint {
            iterations: t,
            length_beam: k,
            npd,
            scores: score(test, &hyps)?,
        })
    };
    let by_iterations = iterations.iter().map(|&t| point(t, 1, false)).collect::<Result<Vec<_>>>()?;
    Ok(RefinementReport {
        k1: point(beam_iterations, 1, false)?,
        k5: point(beam_iterations, 5, false)?,
        k5_npd: point(beam_iterations, 5, true)?,
        by_iterations,
    })
}

pub fn refinement_series(r: &RefinementReport) -> Vec<(String, Vec<(f64, f64)>)> {
    vec![(
        "NAR K=1".into(),
        r.by_iterations
            .iter()
            .map(|p| (p.iterations as f64, p.scores.bleu))
            .collect(),
    )]
}

pub fn held_out_examples(corpus: &PairCorpus, limit: Option<usize>) -> Vec<&PairExample> {
    held_out(corpus, limit)
}
