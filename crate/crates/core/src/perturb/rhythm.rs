use rand::Rng;

use super::spectral::{analysis_hop, wrap_phase, FFT_SIZE};
use super::sample_uniform;
use crate::dsp::stft::{Cpx, Stft};
use crate::dsp::Waveform;

/// One resampling segment: `frames` analysis frames stretched by `factor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub frames: usize,
    pub factor: f64,
}

/// Splits `total` frames into segments of `lo..=hi` frames (the last one
/// takes the remainder) and draws a value for each from `draw`.
pub fn plan_segments<R: Rng + ?Sized>(
    rng: &mut R,
    total: usize,
    (lo, hi): (usize, usize),
    mut draw: impl FnMut(&mut R) -> f64,
) -> Vec<Segment> {
    let mut segs = Vec::new();
    let mut left = total;
    while left > 0 {
        let len = rng.random_range(lo..=hi).min(left);
        segs.push(Segment {
            frames: len,
            factor: draw(rng),
        });
        left -= len;
    }
    segs
}

pub fn num_analysis_frames(w: &Waveform) -> usize {
    w.len() / analysis_hop(w.sample_rate()) + 1
}

/// Stretches each segment of the frame sequence by linear interpolation
/// of magnitudes and instantaneous frequencies on an endpoint-aligned grid,
/// then resynthesizes with accumulated phases. Local pitch is kept. Output
/// frames that land exactly on consecutive source frames reuse the source
/// phase, so unit factors reproduce the input.
pub fn random_resample_with(w: &Waveform, segments: &[Segment]) -> Waveform {
    let hop = analysis_hop(w.sample_rate());
    let stft = Stft::new(FFT_SIZE, hop);
    let frames = stft.analyze(w.samples());
    let n = frames.len();
    let bins = stft.num_bins();
    let expected = 2.0 * std::f64::consts::PI * hop as f64 / FFT_SIZE as f64;
    // Instantaneous frequency (in bins) per source frame.
    let mut inst = vec![vec![0.0; bins]; n];
    for t in 0..n {
        for k in 0..bins {
            inst[t][k] = if t == 0 {
                k as f64
            } else {
                let dev = wrap_phase(frames[t][k].arg() - frames[t - 1][k].arg() - k as f64 * expected);
                k as f64 + dev / expected
            };
        }
    }
    let mut out: Vec<Vec<Cpx>> = Vec::new();
    let mut acc = vec![0.0; bins];
    let mut prev_pos: Option<f64> = None;
    let mut start = 0usize;
    for seg in segments {
        if start >= n {
            break;
        }
        let len = seg.frames.min(n - start);
        let m = ((len as f64 * seg.factor).round() as usize).max(1);
        let step = if m > 1 { (len - 1) as f64 / (m - 1) as f64 } else { 0.0 };
        for i in 0..m {
            let pos = start as f64 + i as f64 * step;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let hi = (lo + 1).min(n - 1);
            let exact = frac == 0.0;
            let locked = exact && (i == 0 || prev_pos == Some(pos - 1.0));
            let mut spec = vec![Cpx::new(0.0, 0.0); bins];
            for k in 0..bins {
                let mag = frames[lo][k].norm() * (1.0 - frac) + frames[hi][k].norm() * frac;
                if locked {
                    acc[k] = frames[lo][k].arg();
                } else {
                    let f = inst[lo][k] * (1.0 - frac) + inst[hi][k] * frac;
                    acc[k] = wrap_phase(acc[k] + f * expected);
                }
                spec[k] = Cpx::from_polar(mag, acc[k]);
            }
            out.push(spec);
            prev_pos = Some(pos);
        }
        start += len;
    }
    let out_len = (w.len() as isize + (out.len() as isize - n as isize) * hop as isize).max(1) as usize;
    let y = stft.synthesize(&out, out_len);
    w.with_samples(y).expect("finite resynthesis")
}

pub fn random_resample<R: Rng + ?Sized>(w: &Waveform, p: &super::PerturbParams, rng: &mut R) -> Waveform {
    let plan = plan_segments(rng, num_analysis_frames(w), p.rr_segment_frames, |r| {
        sample_uniform(r, p.rr_factor_range)
    });
    random_resample_with(w, &plan)
}
