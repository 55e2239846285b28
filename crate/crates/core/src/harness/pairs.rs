//! Synthetic translation pairs: source token strings rendered as noisy
//! pseudo-mel frames, targets produced by a fixed token-to-unit mapping
//! with fertility and local reordering, optionally drawn from one of two
//! "dialect" tables per sentence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::synth_speech::Split;
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::nn::checkpoint::{load_file, save_file};
use crate::nn::{Mat, ParamStore};
use crate::seqmodel::Pair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairTaskSpec {
    pub source_vocab: usize,
    pub unit_vocab: usize,
    /// Source tokens per sentence, inclusive.
    pub source_len: (usize, usize),
    pub frames_per_token: (usize, usize),
    pub feature_dim: usize,
    pub num_pairs: usize,
    /// Valid targets per source: 1 or 2.
    pub multimodality: usize,
    /// Probability of each target table when `multimodality` is 2.
    pub weights: (f64, f64),
    /// Probability that a source token maps to two units.
    pub fertility2_prob: f64,
    pub mapping_seed: u64,
    pub frame_noise: f64,
    /// Probability that a training example re-uses an earlier recording
    /// (identical source features) with a freshly drawn target table.
    pub repeat_fraction: f64,
    pub test_fraction: f64,
}

impl Default for PairTaskSpec {
    fn default() -> Self {
        Self {
            source_vocab: 12,
            unit_vocab: 64,
            source_len: (4, 12),
            frames_per_token: (4, 6),
            feature_dim: 80,
            num_pairs: 2000,
            multimodality: 1,
            weights: (0.5, 0.5),
            fertility2_prob: 0.4,
            mapping_seed: 7,
            frame_noise: 0.3,
            repeat_fraction: 0.0,
            test_fraction: 0.1,
        }
    }
}

impl PairTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.source_vocab < 3 || self.source_len.0 == 0 || self.source_len.0 > self.source_len.1 {
            return Err(Error::Config("need at least 3 source tokens and a valid length range".into()));
        }
        if self.frames_per_token.0 == 0 || self.frames_per_token.0 > self.frames_per_token.1 {
            return Err(Error::Config("bad frames_per_token range".into()));
        }
        if !(0.0..1.0).contains(&self.repeat_fraction) {
            return Err(Error::Config("repeat_fraction must lie in [0, 1)".into()));
        }
        if !(1..=2).contains(&self.multimodality) {
            return Err(Error::Config("multimodality must be 1 or 2".into()));
        }
        let (a, b) = self.weights;
        if a < 0.0 || b < 0.0 || a + b <= 0.0 {
            return Err(Error::Config("weights must be non-negative and not both zero".into()));
        }
        // Each table needs up to two distinct units per source token.
        if 2 * self.source_vocab * self.multimodality > self.unit_vocab {
            return Err(Error::Config(format!(
                "unit vocabulary {} too small for {} source tokens",
                self.unit_vocab, self.source_vocab
            )));
        }
        Ok(())
    }
}

/// Token-to-unit tables plus the acoustic prototypes of the source tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMapping {
    /// `tables[d][s]` is the unit sequence for source token `s` in table `d`.
    pub tables: Vec<Vec<Vec<usize>>>,
    /// Tokens below this id are modifiers that swap with a following head.
    pub modifier_below: usize,
    pub prototypes: Vec<Vec<f64>>,
}

impl PairMapping {
    pub fn new(spec: &PairTaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.mapping_seed);
        let fert: Vec<usize> = (0..spec.source_vocab)
            .map(|_| if rng.random::<f64>() < spec.fertility2_prob { 2 } else { 1 })
            .collect();
        let mut pool: Vec<usize> = (0..spec.unit_vocab).collect();
        rand::seq::SliceRandom::shuffle(pool.as_mut_slice(), &mut rng);
        let mut next = pool.into_iter();
        let tables = (0..spec.multimodality)
            .map(|_| {
                fert.iter()
                    .map(|&f| (0..f).map(|_| next.next().expect("vocab checked")).collect())
                    .collect()
            })
            .collect();
        let d = spec.feature_dim;
        let prototypes = (0..spec.source_vocab)
            .map(|_| {
                let c1 = rng.random_range(0.0..d as f64);
                let c2 = rng.random_range(0.0..d as f64);
                let w = rng.random_range(3.0..8.0);
                (0..d)
                    .map(|k| {
                        let k = k as f64;
                        2.0 * (-(k - c1).powi(2) / (2.0 * w * w)).exp() + 1.5 * (-(k - c2).powi(2) / (2.0 * w * w)).exp()
                            - 1.0
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            tables,
            modifier_below: spec.source_vocab / 3,
            prototypes,
        })
    }

    /// Target of `source` under table `d`: a modifier immediately followed
    /// by a non-modifier swaps with it, then every token is replaced by its
    /// units.
    pub fn translate(&self, source: &[usize], d: usize) -> Vec<usize> {
        let mut order = Vec::with_capacity(source.len());
        let mut i = 0;
        while i < source.len() {
            let is_mod = |t: usize| t < self.modifier_below;
            if i + 1 < source.len() && is_mod(source[i]) && !is_mod(source[i + 1]) {
                order.push(source[i + 1]);
                order.push(source[i]);
                i += 2;
            } else {
                order.push(source[i]);
                i += 1;
            }
        }
        order.iter().flat_map(|&t| self.tables[d][t].iter().copied()).collect()
    }

    /// Inverse of a single-token translation (None for unknown sequences).
    pub fn source_of(&self, units: &[usize]) -> Option<(usize, usize)> {
        self.tables
            .iter()
            .enumerate()
            .find_map(|(d, t)| t.iter().position(|u| u == units).map(|s| (s, d)))
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    /// Renders source tokens as `[frames x dim]` pseudo-mel with per-token
    /// durations, per-frame noise and a per-sentence level offset.
    pub fn render(&self, source: &[usize], spec: &PairTaskSpec, rng: &mut impl Rng) -> Mat {
        let noise = Normal::new(0.0, spec.frame_noise.max(1e-12)).expect("finite std");
        let offset = rng.random_range(-1.0..1.0);
        let gain = rng.random_range(0.8..1.25);
        let d = spec.feature_dim;
        let mut data = Vec::new();
        for &t in source {
            let n = rng.random_range(spec.frames_per_token.0..=spec.frames_per_token.1);
            for _ in 0..n {
                data.extend(self.prototypes[t].iter().map(|&p| gain * p + offset + noise.sample(rng)));
            }
        }
        Mat::from_vec(data.len() / d, d, data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairExample {
    pub pair: Pair,
    pub source_tokens: Vec<usize>,
    /// Every valid target (one per table).
    pub references: Vec<Vec<usize>>,
    /// Table the training target was drawn from.
    pub table: usize,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct PairCorpus {
    pub spec: PairTaskSpec,
    pub mapping: PairMapping,
    pub examples: Vec<PairExample>,
}

impl PairCorpus {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &PairExample> {
        self.examples.iter().filter(move |e| e.split == s)
    }

    pub fn pairs(&self, s: Split) -> Vec<Pair> {
        self.split(s).map(|e| e.pair.clone()).collect()
    }
}

fn draw_table(spec: &PairTaskSpec, rng: &mut impl Rng) -> usize {
    if spec.multimodality == 1 {
        return 0;
    }
    let (a, b) = spec.weights;
    usize::from(rng.random::<f64>() * (a + b) >= a)
}

/// Draws `num_pairs` examples; the last `test_fraction` are held out.
/// Ids are `pair{index:05}`.
pub fn gen_pair_corpus(spec: &PairTaskSpec, seed: u64) -> Result<PairCorpus> {
    let mapping = PairMapping::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_test = (spec.num_pairs as f64 * spec.test_fraction).round() as usize;
    let n_train = spec.num_pairs.saturating_sub(n_test);
    let mut examples: Vec<PairExample> = Vec::with_capacity(spec.num_pairs);
    for i in 0..spec.num_pairs {
        let id = format!("pair{i:05}");
        let split = if i < n_train { Split::Train } else { Split::Test };
        if split == Split::Train && i > 0 && rng.random::<f64>() < spec.repeat_fraction {
            // Same recording, target table drawn again.
            let j = rng.random_range(0..i);
            let mut e = examples[j].clone();
            e.table = draw_table(spec, &mut rng);
            e.pair.id = id;
            e.pair.target = e.references[e.table].clone();
            examples.push(e);
            continue;
        }
        let len = rng.random_range(spec.source_len.0..=spec.source_len.1);
        let tokens = draw_tokens(spec.source_vocab, len, &mut rng);
        examples.push(example(&mapping, spec, id, tokens, split, &mut rng));
    }
    Ok(PairCorpus {
        spec: spec.clone(),
        mapping,
        examples,
    })
}

/// Uniform tokens with no immediate repeats: a doubled token would only
/// be recoverable from its duration, which overlaps with a single one.
fn draw_tokens(vocab: usize, len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(len);
    while out.len() < len {
        let t = rng.random_range(0..vocab);
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}

fn example(
    mapping: &PairMapping,
    spec: &PairTaskSpec,
    id: String,
    tokens: Vec<usize>,
    split: Split,
    rng: &mut impl Rng,
) -> PairExample {
    let references: Vec<Vec<usize>> = (0..mapping.num_tables()).map(|d| mapping.translate(&tokens, d)).collect();
    let table = draw_table(spec, rng);
    let source = mapping.render(&tokens, spec, rng);
    PairExample {
        pair: Pair {
            id,
            source,
            target: references[table].clone(),
        },
        source_tokens: tokens,
        references,
        table,
        split,
    }
}

/// Test sources whose primary target has exactly `target_len` units, used
/// to fill latency buckets.
pub fn gen_length_bucket(spec: &PairTaskSpec, target_len: usize, count: usize, seed: u64) -> Result<Vec<PairExample>> {
    let mapping = PairMapping::new(spec)?;
    if target_len == 0 {
        return Err(Error::Parameter("bucket length must be positive".into()));
    }
    let single: Vec<usize> = (0..spec.source_vocab).filter(|&t| mapping.tables[0][t].len() == 1).collect();
    if single.is_empty() {
        return Err(Error::Config("mapping has no fertility-1 token to pad lengths".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|i| {
            let mut tokens = Vec::new();
            let mut units = 0;
            while units < target_len {
                let t = loop {
                    let t = if target_len - units == 1 {
                        single[rng.random_range(0..single.len())]
                    } else {
                        rng.random_range(0..spec.source_vocab)
                    };
                    if tokens.last() != Some(&t) || single.len() == 1 && target_len - units == 1 {
                        break t;
                    }
                };
                units += mapping.tables[0][t].len();
                tokens.push(t);
            }
            example(&mapping, spec, format!("len{target_len}_{i:03}"), tokens, Split::Test, &mut rng)
        })
        .collect())
}

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const SOURCES_FILE: &str = "sources.tsck";

#[derive(Serialize, Deserialize)]
struct PairRecord {
    id: String,
    split: Split,
    target: Vec<usize>,
    references: Vec<Vec<usize>>,
    source_tokens: Vec<usize>,
    table: usize,
}

/// Writes `pairs.jsonl` (targets and metadata) and `sources.tsck` (source
/// features keyed by id) under `dir`.
pub fn save_pair_set(dir: impl AsRef<Path>, examples: &[PairExample]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut store = ParamStore::new();
    let mut seen = HashSet::new();
    let records: Vec<PairRecord> = examples
        .iter()
        .map(|e| {
            if !seen.insert(e.pair.id.as_str()) {
                return Err(Error::Input(format!("duplicate pair id {:?}", e.pair.id)));
            }
            store.add(e.pair.id.clone(), e.pair.source.clone());
            Ok(PairRecord {
                id: e.pair.id.clone(),
                split: e.split,
                target: e.pair.target.clone(),
                references: e.references.clone(),
                source_tokens: e.source_tokens.clone(),
                table: e.table,
            })
        })
        .collect::<Result<_>>()?;
    write_jsonl(dir.join(PAIRS_FILE), &records)?;
    save_file(dir.join(SOURCES_FILE), "pair-sources", &store)
}

pub fn load_pair_set(dir: impl AsRef<Path>) -> Result<Vec<PairExample>> {
    let dir = dir.as_ref();
    let records: Vec<PairRecord> = read_jsonl(dir.join(PAIRS_FILE))?;
    let (_, tensors) = load_file(dir.join(SOURCES_FILE))?;
    let mut sources: HashMap<String, Mat> = tensors.into_iter().collect();
    records
        .into_iter()
        .map(|r| {
            let source = sources
                .remove(&r.id)
                .ok_or_else(|| Error::Input(format!("no source features for {}", r.id)))?;
            Ok(PairExample {
                pair: Pair {
                    id: r.id,
                    source,
                    target: r.target,
                },
                source_tokens: r.source_tokens,
                references: r.references,
                table: r.table,
                split: r.split,
            })
        })
        .collect()
}
