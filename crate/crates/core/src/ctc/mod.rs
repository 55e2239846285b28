//! CTC loss, greedy decoding and the encoder finetuning loop that maps
//! perturbed audio to the units of its style-normalized version.

mod finetune;

use crate::error::{Error, Result};
use crate::nn::{argmax, Mat, Seg, Tape, Var};
use crate::unitizer::collapse_units;

pub use finetune::{finetune_encoder, pseudo_text, CtcExample, FinetuneConfig, FinetuneReport};

/// Lattice column of the blank label. Unit `u` lives in column `u + 1`.
pub const BLANK: usize = 0;

fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

/// Minimum number of frames that can emit `target`: one per label plus
/// a blank between each pair of equal neighbours.
pub fn required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_feasible(frames: usize, target: &[usize], labels: usize) -> Result<()> {
    if let Some(&bad) = target.iter().find(|&&u| u + 1 >= labels) {
        return Err(Error::Vocab {
            id: bad,
            size: labels.saturating_sub(1),
        });
    }
    let required = required_frames(target);
    if frames < required {
        return Err(Error::InfeasibleAlignment {
            target_len: target.len(),
            required,
            frames,
        });
    }
    Ok(())
}

/// Negative log-likelihood of `target` (unit ids) under a `[T x (K+1)]`
/// log-probability lattice, and its gradient with respect to the lattice.
pub fn ctc_loss_and_grad(lattice: &Mat, target: &[usize]) -> Result<(f64, Mat)> {
    let (t_len, labels) = lattice.shape();
    check_feasible(t_len, target, labels)?;
    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(target.iter().flat_map(|&u| [u + 1, BLANK]))
        .collect();
    let s_len = ext.len();
    let skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = Mat::filled(t_len, s_len, ninf);
    alpha.set(0, 0, lattice.get(0, ext[0]));
    if s_len > 1 {
        alpha.set(0, 1, lattice.get(0, ext[1]));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let a = alpha.get(t - 1, s);
            let b = if s >= 1 { alpha.get(t - 1, s - 1) } else { ninf };
            let c = if skip(s) { alpha.get(t - 1, s - 2) } else { ninf };
            alpha.set(t, s, lse3(a, b, c) + lattice.get(t, ext[s]));
        }
    }
    let last = t_len - 1;
    let log_p = if s_len > 1 {
        lse2(alpha.get(last, s_len - 1), alpha.get(last, s_len - 2))
    } else {
        alpha.get(last, 0)
    };
    if !log_p.is_finite() {
        return Err(Error::Training("target has zero probability under the lattice".into()));
    }

    let mut beta = Mat::filled(t_len, s_len, ninf);
    beta.set(last, s_len - 1, lattice.get(last, ext[s_len - 1]));
    if s_len > 1 {
        beta.set(last, s_len - 2, lattice.get(last, ext[s_len - 2]));
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let a = beta.get(t + 1, s);
            let b = if s + 1 < s_len { beta.get(t + 1, s + 1) } else { ninf };
            let c = if s + 2 < s_len && skip(s + 2) { beta.get(t + 1, s + 2) } else { ninf };
            beta.set(t, s, lse3(a, b, c) + lattice.get(t, ext[s]));
        }
    }

    let mut grad = Mat::zeros(t_len, labels);
    for t in 0..t_len {
        for s in 0..s_len {
            let occ = alpha.get(t, s) + beta.get(t, s) - lattice.get(t, ext[s]) - log_p;
            if occ > ninf {
                let g = grad.get(t, ext[s]) - occ.exp();
                grad.set(t, ext[s], g);
            }
        }
    }
    Ok((-log_p, grad))
}

pub fn ctc_nll(lattice: &Mat, target: &[usize]) -> Result<f64> {
    ctc_loss_and_grad(lattice, target).map(|(l, _)| l)
}

/// Frame-wise argmax, merge repeats, drop blanks; returns unit ids.
pub fn ctc_greedy_decode(lattice: &Mat) -> Vec<usize> {
    let best: Vec<usize> = (0..lattice.rows()).map(|t| argmax(lattice.row(t))).collect();
    collapse_units(&best)
        .into_iter()
        .filter(|&c| c != BLANK)
        .map(|c| c - 1)
        .collect()
}

/// Adds the summed CTC loss of every segment of `logp` (stacked lattices)
/// to the tape, divided by `norm`.
pub fn ctc_loss<'a>(tape: &mut Tape<'a>, logp: Var, segs: &[Seg], targets: &[&[usize]], norm: f64) -> Result<Var> {
    let lp = tape.value(logp);
    let mut grad = Mat::zeros(lp.rows(), lp.cols());
    let mut total = 0.0;
    for (seg, target) in segs.iter().zip(targets) {
        let lattice = lp.slice_rows(seg.start, seg.len);
        let (l, g) = ctc_loss_and_grad(&lattice, target)?;
        total += l;
        grad.add_block(seg.start, 0, &g);
    }
    grad.scale_assign(1.0 / norm);
    Ok(tape.precomputed(logp, total / norm, grad))
}
