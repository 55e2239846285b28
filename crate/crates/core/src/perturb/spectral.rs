//! Frame-wise spectral processing: cepstral envelopes, formant warping and
//! envelope-preserving phase-vocoder pitch shifting.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::dsp::stft::{Cpx, Stft};
use crate::dsp::{ms_to_samples, Waveform, DEFAULT_HOP_MS};

pub const FFT_SIZE: usize = 1024;
pub const LIFTER_ORDER: usize = 40;
const MAG_FLOOR: f64 = 1e-10;
/// Envelope estimation floor relative to the frame's largest bin, so that
/// sparse spectra (a pure tone) still get a usable envelope.
const REL_FLOOR: f64 = 1e-4;

pub fn wrap_phase(p: f64) -> f64 {
    p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor()
}

/// Low-quefrency smoothing of a half log-magnitude spectrum.
pub struct Envelope {
    n: usize,
    order: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Envelope {
    pub fn new(n: usize, order: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            order,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    /// Returns the smoothed natural-log envelope for `log_mag` (`n/2 + 1` bins).
    pub fn log_envelope(&self, log_mag: &[f64]) -> Vec<f64> {
        let n = self.n;
        let half = n / 2;
        let mut buf: Vec<Cpx> = (0..n)
            .map(|k| {
                let kk = if k <= half { k } else { n - k };
                Cpx::new(log_mag[kk], 0.0)
            })
            .collect();
        self.inv.process(&mut buf);
        for (q, c) in buf.iter_mut().enumerate() {
            let keep = q < self.order || q > n - self.order;
            *c = if keep { Cpx::new(c.re / n as f64, 0.0) } else { Cpx::new(0.0, 0.0) };
        }
        self.fwd.process(&mut buf);
        buf[..=half].iter().map(|c| c.re).collect()
    }
}

/// Linear interpolation of `v` at fractional index `x`, clamped to the ends.
fn interp(v: &[f64], x: f64) -> f64 {
    if x <= 0.0 {
        return v[0];
    }
    let last = v.len() - 1;
    if x >= last as f64 {
        return v[last];
    }
    let i = x.floor() as usize;
    let f = x - i as f64;
    v[i] * (1.0 - f) + v[i + 1] * f
}

/// Analysis hop shared by the spectral perturbations (the mel hop).
pub fn analysis_hop(sample_rate: u32) -> usize {
    ms_to_samples(DEFAULT_HOP_MS, sample_rate).max(1)
}

/// Applies a per-frame pitch ratio to the excitation and a global warp
/// `formant_ratio` to the spectral envelope. Frames with ratio exactly 1
/// keep their analysis phases, so identity settings reproduce the input.
/// `pitch_ratio` is sampled at analysis-frame rate; missing trailing entries
/// repeat the last value.
pub fn shift_pitch_and_formants(w: &Waveform, pitch_ratio: &[f64], formant_ratio: f64) -> Waveform {
    let hop = analysis_hop(w.sample_rate());
    let stft = Stft::new(FFT_SIZE, hop);
    let env = Envelope::new(FFT_SIZE, LIFTER_ORDER);
    let frames = stft.analyze(w.samples());
    let bins = stft.num_bins();
    let expected = 2.0 * PI * hop as f64 / FFT_SIZE as f64;
    let mut prev_phase = vec![0.0; bins];
    let mut acc = vec![0.0; bins];
    let mut out_frames = Vec::with_capacity(frames.len());
    let mut log_mag = vec![0.0; bins];
    let mut new_exc = vec![0.0; bins];
    let mut new_freq = vec![0.0; bins];
    for (t, spec) in frames.iter().enumerate() {
        let r = pitch_ratio
            .get(t)
            .or(pitch_ratio.last())
            .copied()
            .unwrap_or(1.0);
        let floor = spec.iter().fold(0.0f64, |m, c| m.max(c.norm())) * REL_FLOOR;
        for (l, c) in log_mag.iter_mut().zip(spec) {
            *l = c.norm().max(floor).max(MAG_FLOOR).ln();
        }
        let e = env.log_envelope(&log_mag);
        let warped: Vec<f64> = if formant_ratio == 1.0 {
            e.clone()
        } else {
            (0..bins).map(|k| interp(&e, k as f64 / formant_ratio)).collect()
        };
        let mut out = vec![Cpx::new(0.0, 0.0); bins];
        if r == 1.0 {
            for k in 0..bins {
                let phase = spec[k].arg();
                let mag = spec[k].norm() * (warped[k] - e[k]).exp();
                out[k] = Cpx::from_polar(mag, phase);
                acc[k] = phase;
                prev_phase[k] = phase;
            }
        } else {
            new_exc.iter_mut().for_each(|v| *v = 0.0);
            new_freq.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..bins {
                let phase = spec[k].arg();
                let dev = wrap_phase(phase - prev_phase[k] - k as f64 * expected);
                prev_phase[k] = phase;
                let true_bin = k as f64 + dev / expected;
                let j = (k as f64 * r).round() as usize;
                if j < bins {
                    let exc = spec[k].norm() * (-e[k]).exp();
                    new_exc[j] += exc;
                    new_freq[j] = true_bin * r;
                }
            }
            for j in 0..bins {
                acc[j] = wrap_phase(acc[j] + new_freq[j] * expected);
                out[j] = Cpx::from_polar(new_exc[j] * warped[j].exp(), acc[j]);
            }
        }
        out_frames.push(out);
    }
    let y = stft.synthesize(&out_frames, w.len());
    w.with_samples(y).expect("finite resynthesis of a finite signal")
}

/// Mean log-magnitude envelope over all frames, as (bin frequencies in Hz,
/// natural-log envelope).
pub fn average_envelope(w: &Waveform) -> (Vec<f64>, Vec<f64>) {
    let stft = Stft::new(FFT_SIZE, analysis_hop(w.sample_rate()));
    let frames = stft.analyze(w.samples());
    let bins = stft.num_bins();
    let mut mean = vec![0.0; bins];
    for spec in &frames {
        for (m, c) in mean.iter_mut().zip(spec) {
            *m += c.norm().max(MAG_FLOOR).ln() / frames.len() as f64;
        }
    }
    let env = Envelope::new(FFT_SIZE, LIFTER_ORDER).log_envelope(&mean);
    let freqs = (0..bins)
        .map(|k| k as f64 * w.sample_rate() as f64 / FFT_SIZE as f64)
        .collect();
    (freqs, env)
}
