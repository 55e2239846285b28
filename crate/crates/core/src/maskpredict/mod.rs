//! Mask-predict training masks and iterative parallel decoding with a
//! length beam, optional teacher rescoring and sequence-level distillation.

#[cfg(test)]
mod tests;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, Mat};
use crate::seqmodel::{EncoderState, ModelKind, NarSession, Pair, S2utModel};

/// Positions to mask for a training target of length `n`: the count is
/// uniform on `1..=n`, the positions a uniform subset (returned sorted).
pub fn sample_training_mask(n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyInput("cannot mask an empty target".into()));
    }
    let count = rng.random_range(1..=n);
    let mut pos = sample(rng, n, count).into_vec();
    pos.sort_unstable();
    Ok(pos)
}

/// Number of positions remasked at iteration `t` of `iterations`:
/// all of them at `t = 0`, then `max(1, floor(n (T - t) / T))`.
pub fn mask_schedule(n: usize, iterations: usize, t: usize) -> Result<usize> {
    if iterations == 0 {
        return Err(Error::Parameter("iterations must be at least 1".into()));
    }
    if t >= iterations {
        return Err(Error::Parameter(format!("iteration {t} outside 0..{iterations}")));
    }
    if t == 0 {
        return Ok(n);
    }
    Ok((n * (iterations - t) / iterations).max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Decoder passes, the all-mask pass included.
    pub iterations: usize,
    pub length_beam: usize,
    /// Rescore the length candidates with the autoregressive teacher.
    pub npd: bool,
    /// Diagnostic mode: remask exactly one position per refinement step,
    /// visiting positions not yet re-predicted first.
    pub single_remask: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            length_beam: 1,
            npd: false,
            single_remask: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self, max_len: usize) -> Result<()> {
        if self.iterations == 0 || self.length_beam == 0 {
            return Err(Error::Config("iterations and length_beam must be at least 1".into()));
        }
        if self.length_beam > max_len {
            return Err(Error::Config(format!(
                "length_beam {} exceeds max_len {max_len}",
                self.length_beam
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Positions fed as mask tokens in this pass.
    pub masked: Vec<usize>,
    /// New predictions at `masked`, in the same order.
    pub predicted: Vec<usize>,
    /// Probability of the current prediction at every position after the update.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub length: usize,
    pub iterations: Vec<IterationTrace>,
    pub output: Vec<usize>,
    /// Mean log of the final per-position scores.
    pub avg_log_score: f64,
    /// Length-normalized teacher log-probability, when rescored.
    pub teacher_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub candidates: Vec<CandidateTrace>,
    /// Index into `candidates` of the returned output.
    pub selected: usize,
    pub output: Vec<usize>,
    /// NAR decoder passes (one per iteration, shared by all candidates).
    pub forward_passes: usize,
    /// Teacher passes when rescoring.
    pub teacher_passes: usize,
}

struct CandidateState {
    tokens: Vec<usize>,
    scores: Vec<f64>,
    repredicted: Vec<bool>,
    trace: Vec<IterationTrace>,
}

/// Positions with the `n` lowest scores, ties to the lower index.
fn lowest_scores(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// Runs mask-predict for every length in `lengths` together: each
/// iteration is one decoder pass over all candidates.
pub fn mask_predict_batch(
    session: &mut NarSession<'_>,
    mask_id: usize,
    lengths: &[usize],
    cfg: &DecodeConfig,
) -> Result<Vec<CandidateTrace>> {
    if cfg.iterations == 0 {
        return Err(Error::Parameter("iterations must be at least 1".into()));
    }
    if lengths.contains(&0) {
        return Err(Error::Parameter("candidate length must be positive".into()));
    }
    let mut states: Vec<CandidateState> = lengths
        .iter()
        .map(|&n| CandidateState {
            tokens: vec![mask_id; n],
            scores: vec![0.0; n],
            repredicted: vec![false; n],
            trace: Vec::new(),
        })
        .collect();
    for t in 0..cfg.iterations {
        let mut masked_sets = Vec::with_capacity(states.len());
        for st in states.iter_mut() {
            let n = st.tokens.len();
            let masked = if t == 0 {
                (0..n).collect()
            } else if cfg.single_remask {
                let fresh: Vec<f64> = (0..n)
                    .map(|i| if st.repredicted[i] { f64::INFINITY } else { st.scores[i] })
                    .collect();
                if st.repredicted.iter().all(|&r| r) {
                    lowest_scores(&st.scores, 1)
                } else {
                    lowest_scores(&fresh, 1)
                }
            } else {
                lowest_scores(&st.scores, mask_schedule(n, cfg.iterations, t)?)
            };
            for &i in &masked {
                st.tokens[i] = mask_id;
            }
            masked_sets.push(masked);
        }
        let inputs: Vec<Vec<usize>> = states.iter().map(|s| s.tokens.clone()).collect();
        let out = session.predict(&inputs)?;
        for ((st, lp), masked) in states.iter_mut().zip(out).zip(masked_sets) {
            let mut predicted = Vec::with_capacity(masked.len());
            for &i in &masked {
                let row = lp.row(i);
                let w = argmax(row);
                st.tokens[i] = w;
                st.scores[i] = row[w].exp();
                if t > 0 {
                    st.repredicted[i] = true;
                }
                predicted.push(w);
            }
            st.trace.push(IterationTrace {
                iteration: t,
                masked,
                predicted,
                scores: st.scores.clone(),
            });
        }
    }
    Ok(states
        .into_iter()
        .map(|st| {
            let n = st.tokens.len() as f64;
            CandidateTrace {
                length: st.tokens.len(),
                avg_log_score: st.scores.iter().map(|s| s.ln()).sum::<f64>() / n,
                output: st.tokens,
                iterations: st.trace,
                teacher_score: None,
            }
        })
        .collect())
}

/// Mask-predict at a fixed target length `n`.
pub fn mask_predict_decode(
    model: &S2utModel,
    enc: &EncoderState,
    n: usize,
    iterations: usize,
) -> Result<(Vec<usize>, DecodeTrace)> {
    let cfg = DecodeConfig {
        iterations,
        ..DecodeConfig::default()
    };
    let mut session = model.nar_session(enc)?;
    let cands = mask_predict_batch(&mut session, model.specials().mask, &[n], &cfg)?;
    let output = cands[0].output.clone();
    Ok((
        output.clone(),
        DecodeTrace {
            candidates: cands,
            selected: 0,
            output,
            forward_passes: session.forward_passes(),
            teacher_passes: 0,
        },
    ))
}

/// Index of the candidate with the highest length-normalized teacher
/// score (ties to the earlier candidate) and all normalized scores.
pub fn npd_select(teacher: &S2utModel, enc: &EncoderState, candidates: &[Vec<usize>]) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("no candidates to rescore".into()));
    }
    let raw = teacher.ar_score_batch(enc, candidates)?;
    let norm: Vec<f64> = raw
        .iter()
        .zip(candidates)
        .map(|(s, c)| s / (c.len() + 1) as f64)
        .collect();
    Ok((first_max(&norm), norm))
}

fn first_max(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Decodes the top-`K` predicted lengths in parallel and returns the
/// candidate with the best mean log-score, or the teacher's favourite when
/// `cfg.npd` is set. The teacher brings its own encoding of the source.
pub fn length_beam_decode(
    model: &S2utModel,
    enc: &EncoderState,
    cfg: &DecodeConfig,
    teacher: Option<(&S2utModel, &EncoderState)>,
) -> Result<(Vec<usize>, DecodeTrace)> {
    cfg.validate(model.config().max_len)?;
    if model.kind() != ModelKind::Nar {
        return Err(Error::Parameter("length beam decoding needs a NAR model".into()));
    }
    let lengths = model.length_predict(enc)?.top_k(cfg.length_beam);
    let mut session = model.nar_session(enc)?;
    let mut cands = mask_predict_batch(&mut session, model.specials().mask, &lengths, cfg)?;
    let mut teacher_passes = 0;
    let selected = if cfg.npd {
        let (teacher, teacher_enc) =
            teacher.ok_or_else(|| Error::Parameter("noisy parallel decoding needs a teacher".into()))?;
        let outputs: Vec<Vec<usize>> = cands.iter().map(|c| c.output.clone()).collect();
        let (best, scores) = npd_select(teacher, teacher_enc, &outputs)?;
        teacher_passes = 1;
        for (c, s) in cands.iter_mut().zip(scores) {
            c.teacher_score = Some(s);
        }
        best
    } else {
        first_max(&cands.iter().map(|c| c.avg_log_score).collect::<Vec<_>>())
    };
    let output = cands[selected].output.clone();
    Ok((
        output.clone(),
        DecodeTrace {
            candidates: cands,
            selected,
            output,
            forward_passes: session.forward_passes(),
            teacher_passes,
        },
    ))
}

/// Encodes `source` (with the teacher too when rescoring) and runs
/// [`length_beam_decode`].
pub fn decode_source(
    model: &S2utModel,
    teacher: Option<&S2utModel>,
    source: &Mat,
    cfg: &DecodeConfig,
) -> Result<(Vec<usize>, DecodeTrace)> {
    let enc = model.encode(source)?;
    match teacher {
        Some(t) if cfg.npd => {
            let tenc = t.encode(source)?;
            length_beam_decode(model, &enc, cfg, Some((t, &tenc)))
        }
        _ => length_beam_decode(model, &enc, cfg, None),
    }
}

#[derive(Clone, Debug, Default)]
pub struct DistillReport {
    pub pairs: Vec<Pair>,
    /// `(utt_id, reason)` for sources the teacher failed on.
    pub dropped: Vec<(String, String)>,
}

/// Replaces every target with the teacher's beam output. Sources the
/// teacher cannot decode (or decodes to nothing) are dropped with a warning.
pub fn distill_corpus(teacher: &S2utModel, pairs: &[Pair], beam: usize) -> Result<DistillReport> {
    if teacher.kind() != ModelKind::Ar {
        return Err(Error::Parameter("distillation needs an autoregressive teacher".into()));
    }
    let mut report = DistillReport::default();
    for p in pairs {
        let out = teacher.encode(&p.source).and_then(|enc| teacher.ar_beam_decode(&enc, beam));
        match out {
            Ok(o) if !o.best.units.is_empty() => report.pairs.push(Pair {
                id: p.id.clone(),
                source: p.source.clone(),
                target: o.best.units,
            }),
            Ok(_) => {
                log::warn!("distill: teacher produced an empty sequence for {}", p.id);
                report.dropped.push((p.id.clone(), "empty output".into()));
            }
            Err(e) => {
                log::warn!("distill: dropping {}: {e}", p.id);
                report.dropped.push((p.id.clone(), e.to_string()));
            }
        }
    }
    Ok(report)
}
