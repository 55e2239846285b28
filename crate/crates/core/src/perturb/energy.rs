use rand::Rng;

use super::rhythm::{plan_segments, Segment};
use super::{sample_uniform, PerturbParams};
use crate::dsp::{ms_to_samples, Waveform, DEFAULT_HOP_MS};

pub const PEAK_LIMIT: f64 = 0.99;

/// Piecewise-constant gain with raised-cosine crossfades of `crossfade`
/// samples centered on each segment boundary. `segments[i].factor` holds
/// the segment gain in dB; segment lengths are in 10 ms frames.
pub fn gain_curve(len: usize, hop: usize, segments: &[Segment], crossfade: usize) -> Vec<f64> {
    let mut gains = vec![0.0; len];
    let mut bounds = Vec::new();
    let mut pos = 0usize;
    let lin: Vec<f64> = segments.iter().map(|s| 10f64.powf(s.factor / 20.0)).collect();
    for (i, s) in segments.iter().enumerate() {
        let end = if i + 1 == segments.len() { len } else { (pos + s.frames * hop).min(len) };
        gains[pos.min(len)..end].iter_mut().for_each(|g| *g = lin[i]);
        if i + 1 < segments.len() {
            bounds.push((end, lin[i], lin[i + 1]));
        }
        pos = end;
    }
    let half = crossfade / 2;
    for (b, g0, g1) in bounds {
        if crossfade == 0 {
            continue;
        }
        let lo = b.saturating_sub(half);
        let hi = (b + half).min(len);
        for (n, g) in gains.iter_mut().enumerate().take(hi).skip(lo) {
            let x = (n - lo) as f64 / crossfade as f64;
            let wgt = 0.5 - 0.5 * (std::f64::consts::PI * x).cos();
            *g = g0 * (1.0 - wgt) + g1 * wgt;
        }
    }
    gains
}

/// Scales down so the peak does not exceed [`PEAK_LIMIT`].
pub fn limit_peak(w: Waveform) -> Waveform {
    let peak = w.peak();
    if peak > PEAK_LIMIT {
        w.scaled(PEAK_LIMIT / peak)
    } else {
        w
    }
}

pub fn energy_perturb_with(w: &Waveform, segments: &[Segment], crossfade_ms: f64) -> Waveform {
    let hop = ms_to_samples(DEFAULT_HOP_MS, w.sample_rate()).max(1);
    let cf = ms_to_samples(crossfade_ms, w.sample_rate());
    let g = gain_curve(w.len(), hop, segments, cf);
    let y = w.samples().iter().zip(&g).map(|(s, g)| s * g).collect();
    limit_peak(w.with_samples(y).expect("finite gains"))
}

pub fn energy_perturb<R: Rng + ?Sized>(w: &Waveform, p: &PerturbParams, rng: &mut R) -> Waveform {
    let hop = ms_to_samples(DEFAULT_HOP_MS, w.sample_rate()).max(1);
    let frames = w.len().div_ceil(hop);
    let plan = plan_segments(rng, frames, p.rr_segment_frames, |r| sample_uniform(r, p.energy_gain_db_range));
    energy_perturb_with(w, &plan, p.energy_crossfade_ms)
}
