//! Decoding latency per output-length bucket, AR beam search against
//! mask-predict.
//!
//! Every bucket decodes at exactly its target length (AR with eos blocked
//! until the length, NAR with the length candidate fixed) so wall-clock
//! reflects the length and not how well the models were trained. The
//! length head still runs for NAR so its cost is counted.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::pairs::{gen_length_bucket, PairTaskSpec};
use crate::error::{Error, Result};
use crate::maskpredict::{mask_predict_batch, npd_select, DecodeConfig};
use crate::nn::Mat;
use crate::seqmodel::{ModelConfig, ModelKind, S2utModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub buckets: Vec<usize>,
    pub utterances_per_bucket: usize,
    /// Timed repetitions per utterance; the median is kept.
    pub repeats: usize,
    /// Untimed decodes at the start of each bucket.
    pub warmup: usize,
    pub ar_beam: usize,
    pub nar: Vec<DecodeConfig>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            buckets: vec![20, 50, 100, 200],
            utterances_per_bucket: 50,
            repeats: 5,
            warmup: 2,
            ar_beam: 5,
            nar: vec![DecodeConfig::default()],
            seed: 0,
        }
    }
}

/// Benchmark config file: timing settings, the task that supplies sources,
/// and the architecture of freshly initialized models when no trained
/// checkpoints are given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSetup {
    pub bench: BenchConfig,
    pub task: PairTaskSpec,
    pub model: ModelConfig,
    pub model_seed: u64,
}

impl Default for BenchSetup {
    fn default() -> Self {
        let task = PairTaskSpec::default();
        Self {
            bench: BenchConfig::default(),
            model: ModelConfig {
                input_dim: task.feature_dim,
                unit_vocab: task.unit_vocab,
                max_len: 256,
                length_bins: 256,
                ..ModelConfig::default()
            },
            task,
            model_seed: 0,
        }
    }
}

impl BenchSetup {
    /// Untrained AR and NAR models of the configured architecture. Timing
    /// at a forced length does not depend on the weights.
    pub fn fresh_models(&self) -> Result<(S2utModel, S2utModel)> {
        Ok((
            S2utModel::new(self.model.clone(), ModelKind::Ar, self.model_seed)?,
            S2utModel::new(self.model.clone(), ModelKind::Nar, self.model_seed + 1)?,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    /// Mean over utterances of the per-utterance median, milliseconds.
    pub mean_ms: f64,
    /// Decoder calls per utterance (identical for every utterance).
    pub forward_passes: usize,
    /// AR mean time divided by this mean time.
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketLatency {
    pub length: usize,
    pub utterances: usize,
    pub mean_source_frames: f64,
    /// Encoder-only time, included in every decode time below.
    pub encoder_ms: f64,
    pub ar: Timing,
    pub nar: Vec<Timing>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub buckets: Vec<BucketLatency>,
    /// Speedup of the first NAR config over AR at the longest bucket.
    pub headline_speedup: f64,
}

impl LatencyReport {
    /// Ratio of a config's mean time at the longest bucket to the shortest
    /// (`None` selects AR).
    pub fn growth(&self, nar_config: Option<usize>) -> f64 {
        let pick = |b: &BucketLatency| match nar_config {
            None => b.ar.mean_ms,
            Some(i) => b.nar[i].mean_ms,
        };
        match (self.buckets.first(), self.buckets.last()) {
            (Some(a), Some(b)) => pick(b) / pick(a),
            _ => f64::NAN,
        }
    }
}

pub fn nar_label(c: &DecodeConfig) -> String {
    format!("NAR T={} K={}{}", c.iterations, c.length_beam, if c.npd { " +NPD" } else { "" })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock of `repeats` runs in milliseconds, plus the last
/// result.
fn time_median<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let t = Instant::now();
        let out = f()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        last = Some(out);
    }
    Ok((median(times), last.expect("repeats checked positive")))
}

/// Forced-length NAR decode: the length head runs, then `length_beam`
/// candidates all of the target length are refined together and rescored
/// by the teacher when NPD is on.
fn nar_fixed(nar: &S2utModel, teacher: Option<&S2utModel>, source: &Mat, len: usize, cfg: &DecodeConfig) -> Result<usize> {
    let enc = nar.encode(source)?;
    std::hint::black_box(nar.length_predict(&enc)?);
    let mut session = nar.nar_session(&enc)?;
    let traces = mask_predict_batch(&mut session, nar.specials().mask, &vec![len; cfg.length_beam], cfg)?;
    if let (true, Some(t)) = (cfg.npd && cfg.length_beam > 1, teacher) {
        let outs: Vec<Vec<usize>> = traces.into_iter().map(|c| c.output).collect();
        std::hint::black_box(npd_select(t, &t.encode(source)?, &outs)?);
    } else {
        std::hint::black_box(traces);
    }
    Ok(session.forward_passes())
}

/// Times AR beam search and each NAR config on `utterances_per_bucket`
/// sources per target length. Runs on the calling thread only.
pub fn bench_latency(
    ar: &S2utModel,
    nar: &S2utModel,
    task: &PairTaskSpec,
    cfg: &BenchConfig,
) -> Result<LatencyReport> {
    if ar.kind() != ModelKind::Ar || nar.kind() != ModelKind::Nar {
        return Err(Error::Parameter("bench_latency needs an AR and a NAR model".into()));
    }
    if cfg.buckets.is_empty() || cfg.utterances_per_bucket == 0 || cfg.repeats == 0 {
        return Err(Error::Config("need buckets, utterances and repeats".into()));
    }
    let max = cfg.buckets.iter().copied().max().unwrap_or(0);
    for m in [ar, nar] {
        if max > m.config().max_len {
            return Err(Error::Length { len: max, max: m.config().max_len });
        }
    }
    for c in &cfg.nar {
        c.validate(nar.config().max_len)?;
    }
    let mut buckets = Vec::new();
    for (bi, &len) in cfg.buckets.iter().enumerate() {
        let set = gen_length_bucket(task, len, cfg.utterances_per_bucket + cfg.warmup, cfg.seed + bi as u64)?;
        let (warm, timed) = set.split_at(cfg.warmup);
        for e in warm {
            let enc = ar.encode(&e.pair.source)?;
            ar.ar_beam_decode_fixed(&enc, cfg.ar_beam, len)?;
            for c in &cfg.nar {
                nar_fixed(nar, Some(ar), &e.pair.source, len, c)?;
            }
        }
        let mut enc_ms = 0.0;
        let mut ar_ms = 0.0;
        let mut ar_passes = 0;
        let mut nar_ms = vec![0.0; cfg.nar.len()];
        let mut nar_passes = vec![0; cfg.nar.len()];
        let mut frames = 0.0;
        for e in timed {
            let src = &e.pair.source;
            frames += src.rows() as f64;
            enc_ms += time_median(cfg.repeats, || nar.encode(src))?.0;
            let (ms, out) = time_median(cfg.repeats, || {
                let enc = ar.encode(src)?;
                ar.ar_beam_decode_fixed(&enc, cfg.ar_beam, len)
            })?;
            ar_ms += ms;
            check_passes("AR", ar_passes, out.forward_passes)?;
            ar_passes = out.forward_passes;
            for (i, c) in cfg.nar.iter().enumerate() {
                let (ms, passes) = time_median(cfg.repeats, || nar_fixed(nar, Some(ar), src, len, c))?;
                nar_ms[i] += ms;
                check_passes("NAR", nar_passes[i], passes)?;
                nar_passes[i] = passes;
            }
        }
        let n = timed.len() as f64;
        let ar_mean = ar_ms / n;
        let bucket = BucketLatency {
            length: len,
            utterances: timed.len(),
            mean_source_frames: frames / n,
            encoder_ms: enc_ms / n,
            ar: Timing {
                label: format!("AR beam={}", cfg.ar_beam),
                mean_ms: ar_mean,
                forward_passes: ar_passes,
                speedup: 1.0,
            },
            nar: cfg
                .nar
                .iter()
                .zip(nar_ms.iter().zip(&nar_passes))
                .map(|(c, (&ms, &p))| Timing {
                    label: nar_label(c),
                    mean_ms: ms / n,
                    forward_passes: p,
                    speedup: ar_mean / (ms / n),
                })
                .collect(),
        };
        log::info!(
            "bucket {len}: AR {:.1} ms, {}",
            bucket.ar.mean_ms,
            bucket
                .nar
                .iter()
                .map(|t| format!("{} {:.1} ms", t.label, t.mean_ms))
                .collect::<Vec<_>>()
                .join(", ")
        );
        buckets.push(bucket);
    }
    let headline_speedup = buckets
        .last()
        .and_then(|b| b.nar.first())
        .map(|t| t.speedup)
        .unwrap_or(f64::NAN);
    Ok(LatencyReport {
        buckets,
        headline_speedup,
    })
}

fn check_passes(what: &str, prev: usize, now: usize) -> Result<()> {
    if prev != 0 && prev != now {
        return Err(Error::Metric(format!("{what} forward passes changed within a bucket: {prev} vs {now}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_counts_follow_construction() {
        let mc = ModelConfig {
            input_dim: 8,
            hidden: 16,
            heads: 2,
            ffn_dim: 32,
            encoder_blocks: 1,
            decoder_blocks: 1,
            max_len: 32,
            length_bins: 32,
            ..ModelConfig::default()
        };
        let ar = S2utModel::new(mc.clone(), ModelKind::Ar, 1).unwrap();
        let nar = S2utModel::new(mc, ModelKind::Nar, 2).unwrap();
        let task = PairTaskSpec {
            feature_dim: 8,
            ..PairTaskSpec::default()
        };
        let cfg = BenchConfig {
            buckets: vec![5, 12],
            utterances_per_bucket: 2,
            repeats: 1,
            warmup: 1,
            ar_beam: 3,
            nar: vec![
                DecodeConfig {
                    iterations: 4,
                    ..DecodeConfig::default()
                },
                DecodeConfig {
                    iterations: 2,
                    length_beam: 3,
                    npd: true,
                    ..DecodeConfig::default()
                },
            ],
            seed: 0,
        };
        let r = bench_latency(&ar, &nar, &task, &cfg).unwrap();
        for b in &r.buckets {
            assert_eq!(b.ar.forward_passes, b.length + 1);
            assert_eq!(b.nar[0].forward_passes, 4);
            assert_eq!(b.nar[1].forward_passes, 2);
            assert!(b.ar.mean_ms > 0.0 && b.nar.iter().all(|t| t.mean_ms > 0.0));
            assert!((b.nar[0].speedup - b.ar.mean_ms / b.nar[0].mean_ms).abs() < 1e-12);
        }
        assert_eq!(r.headline_speedup, r.buckets[1].nar[0].speedup);
        assert!(bench_latency(&nar, &ar, &task, &cfg).is_err());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
