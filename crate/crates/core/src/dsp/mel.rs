use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::stft::{hann, next_pow2, padded_slice};
use super::{ms_to_samples, Waveform, DEFAULT_HOP_MS, DEFAULT_NUM_MELS, DEFAULT_WIN_MS};
use crate::error::{Error, Result};
use crate::nn::Mat;

/// Natural-log floor applied to mel energies.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelConfig {
    pub num_mels: usize,
    pub hop_ms: f64,
    pub win_ms: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            num_mels: DEFAULT_NUM_MELS,
            hop_ms: DEFAULT_HOP_MS,
            win_ms: DEFAULT_WIN_MS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// `[num_frames x num_mels]` natural-log mel energies.
    pub frames: Mat,
    pub hop_ms: f64,
    pub num_mels: usize,
}

impl MelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// HTK triangular filters over `n_fft / 2 + 1` bins, `[num_mels x bins]`.
fn filterbank(num_mels: usize, n_fft: usize, sample_rate: u32) -> Mat {
    let bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..num_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (num_mels + 1) as f64))
        .collect();
    let mut fb = Mat::zeros(num_mels, bins);
    for m in 0..num_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb.set(m, k, w);
        }
    }
    fb
}

/// Frame `i` is centered on the middle of the `i`-th hop, so the frame
/// count is `floor(len / hop)`.
pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    if cfg.num_mels == 0 {
        return Err(Error::Parameter("num_mels must be positive".into()));
    }
    if !(cfg.hop_ms > 0.0) || cfg.win_ms < cfg.hop_ms {
        return Err(Error::Parameter(format!(
            "need 0 < hop_ms <= win_ms, got hop {} win {}",
            cfg.hop_ms, cfg.win_ms
        )));
    }
    let sr = w.sample_rate();
    let hop = ms_to_samples(cfg.hop_ms, sr).max(1);
    let win = ms_to_samples(cfg.win_ms, sr).max(1);
    if w.len() < win {
        return Err(Error::EmptyInput(format!(
            "waveform of {} samples is shorter than one {win}-sample window",
            w.len()
        )));
    }
    let n_fft = next_pow2(win);
    let fb = filterbank(cfg.num_mels, n_fft, sr);
    let window = hann(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let num_frames = w.len() / hop;
    let mut frames = Mat::zeros(num_frames, cfg.num_mels);
    let mut seg = vec![0.0; win];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    for i in 0..num_frames {
        let center = i * hop + hop / 2;
        padded_slice(w.samples(), center as isize - (win / 2) as isize, win, &mut seg);
        buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        for j in 0..win {
            buf[j].re = seg[j] * window[j];
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        let row = frames.row_mut(i);
        for (m, out) in row.iter_mut().enumerate() {
            let e: f64 = fb.row(m).iter().zip(&power).map(|(a, b)| a * b).sum();
            *out = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram {
        frames,
        hop_ms: cfg.hop_ms,
        num_mels: cfg.num_mels,
    })
}
