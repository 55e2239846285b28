//! BLEU over token sequences, plus position-wise token accuracy.
//!
//! Corpus BLEU sums clipped n-gram matches over all sentences and applies
//! no smoothing, so any order with zero matches gives 0. Sentence BLEU
//! adds one to numerator and denominator for orders 2..4.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Corpus BLEU in [0, 100].
    pub bleu: f64,
    pub brevity_penalty: f64,
    /// Clipped matches and totals per n-gram order.
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
    /// Add-one smoothed sentence BLEU per hypothesis.
    pub sentence: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Stats {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

fn ngrams<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for w in seq.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

fn stats<T: Eq + Hash>(hyp: &[T], refs: &[Vec<T>]) -> Stats {
    let mut s = Stats {
        hyp_len: hyp.len(),
        // Closest reference length, shorter on ties.
        ref_len: refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .unwrap_or(0),
        ..Stats::default()
    };
    for n in 1..=MAX_ORDER {
        let h = ngrams(hyp, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngrams(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        s.matches[n - 1] = h.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
    }
    s
}

fn brevity(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

fn score(s: &Stats, smooth: bool) -> f64 {
    if s.hyp_len == 0 || s.matches[0] == 0 {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 0..MAX_ORDER {
        let (m, t) = if smooth && n > 0 {
            (s.matches[n] + 1, s.totals[n] + 1)
        } else {
            (s.matches[n], s.totals[n])
        };
        if m == 0 {
            return 0.0;
        }
        log_p += (m as f64 / t as f64).ln();
    }
    100.0 * brevity(s.hyp_len, s.ref_len) * (log_p / MAX_ORDER as f64).exp()
}

/// Sentence BLEU with add-one smoothing for orders 2..4.
pub fn sentence_bleu<T: Eq + Hash + Clone>(reference: &[T], hyp: &[T]) -> f64 {
    score(&stats(hyp, &[reference.to_vec()]), true)
}

/// Corpus BLEU against one reference per hypothesis.
pub fn corpus_bleu<T: Eq + Hash + Clone>(refs: &[Vec<T>], hyps: &[Vec<T>]) -> Result<BleuReport> {
    let multi: Vec<Vec<Vec<T>>> = refs.iter().map(|r| vec![r.clone()]).collect();
    corpus_bleu_multi(&multi, hyps)
}

/// Corpus BLEU where each hypothesis may match any of several references:
/// n-gram counts clip at the maximum reference count and the brevity
/// penalty uses the closest reference length.
pub fn corpus_bleu_multi<T: Eq + Hash>(refs: &[Vec<Vec<T>>], hyps: &[Vec<T>]) -> Result<BleuReport> {
    if refs.len() != hyps.len() {
        return Err(Error::Input(format!("{} references for {} hypotheses", refs.len(), hyps.len())));
    }
    if refs.is_empty() || refs.iter().any(|r| r.is_empty()) {
        return Err(Error::Input("every hypothesis needs at least one reference".into()));
    }
    let mut total = Stats::default();
    let mut sentence = Vec::with_capacity(hyps.len());
    for (r, h) in refs.iter().zip(hyps) {
        let s = stats(h, r);
        for n in 0..MAX_ORDER {
            total.matches[n] += s.matches[n];
            total.totals[n] += s.totals[n];
        }
        total.hyp_len += s.hyp_len;
        total.ref_len += s.ref_len;
        sentence.push(score(&s, true));
    }
    Ok(BleuReport {
        bleu: score(&total, false),
        brevity_penalty: brevity(total.hyp_len, total.ref_len),
        matches: total.matches,
        totals: total.totals,
        hyp_len: total.hyp_len,
        ref_len: total.ref_len,
        sentence,
    })
}

/// Position-wise token accuracy in percent: per hypothesis, the best over
/// references of matching positions divided by the longer length, averaged
/// over hypotheses.
pub fn token_accuracy<T: PartialEq>(refs: &[Vec<Vec<T>>], hyps: &[Vec<T>]) -> Result<f64> {
    if refs.len() != hyps.len() || hyps.is_empty() {
        return Err(Error::Input(format!("{} references for {} hypotheses", refs.len(), hyps.len())));
    }
    let mut acc = 0.0;
    for (rs, h) in refs.iter().zip(hyps) {
        acc += rs
            .iter()
            .map(|r| {
                let denom = r.len().max(h.len());
                if denom == 0 {
                    return 1.0;
                }
                r.iter().zip(h).filter(|(a, b)| a == b).count() as f64 / denom as f64
            })
            .fold(0.0, f64::max);
    }
    Ok(100.0 * acc / hyps.len() as f64)
}
