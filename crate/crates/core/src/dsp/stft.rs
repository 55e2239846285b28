//! Short-time Fourier analysis and weighted overlap-add resynthesis.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub type Cpx = Complex<f64>;

/// Periodic Hann window, which sums to a constant under 4x overlap.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Copies `len` samples starting at `start` (which may be negative or run
/// past the end) with zeros outside the signal.
pub fn padded_slice(x: &[f64], start: isize, len: usize, out: &mut [f64]) {
    for (j, o) in out.iter_mut().take(len).enumerate() {
        let idx = start + j as isize;
        *o = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
    }
}

/// Centered STFT: frame `i` covers `[i*hop - n/2, i*hop + n/2)`.
pub struct Stft {
    n: usize,
    hop: usize,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            hop,
            window: hann(n),
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn num_bins(&self) -> usize {
        self.n / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    /// Returns the non-negative-frequency half spectrum of every frame.
    pub fn analyze(&self, x: &[f64]) -> Vec<Vec<Cpx>> {
        let mut frame = vec![0.0; self.n];
        let mut buf = vec![Cpx::new(0.0, 0.0); self.n];
        (0..self.num_frames(x.len()))
            .map(|i| {
                let start = (i * self.hop) as isize - (self.n / 2) as isize;
                padded_slice(x, start, self.n, &mut frame);
                for ((b, &s), &w) in buf.iter_mut().zip(&frame).zip(&self.window) {
                    *b = Cpx::new(s * w, 0.0);
                }
                self.fwd.process(&mut buf);
                buf[..self.num_bins()].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add of half spectra back to `len` samples. Positions
    /// with negligible window coverage are left at zero.
    pub fn synthesize(&self, frames: &[Vec<Cpx>], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Cpx::new(0.0, 0.0); self.n];
        let half = self.n / 2;
        for (i, spec) in frames.iter().enumerate() {
            buf[..=half].copy_from_slice(&spec[..=half]);
            buf[0].im = 0.0;
            buf[half].im = 0.0;
            for k in 1..half {
                buf[self.n - k] = spec[k].conj();
            }
            self.inv.process(&mut buf);
            let start = (i * self.hop) as isize - half as isize;
            for j in 0..self.n {
                let idx = start + j as isize;
                if idx < 0 || idx as usize >= len {
                    continue;
                }
                let w = self.window[j];
                out[idx as usize] += buf[j].re / self.n as f64 * w;
                norm[idx as usize] += w * w;
            }
        }
        for (o, &nm) in out.iter_mut().zip(&norm) {
            if nm > 1e-8 {
                *o /= nm;
            } else {
                *o = 0.0;
            }
        }
        out
    }
}
