use super::stft::padded_slice;
use super::{ms_to_samples, Waveform, DEFAULT_HOP_MS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchConfig {
    /// Cumulative-mean-normalized difference threshold.
    pub threshold: f64,
    pub fmin: f64,
    pub fmax: f64,
    pub hop_ms: f64,
    /// Frames whose RMS falls below this are unvoiced without analysis.
    pub silence_rms: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            threshold: 0.15,
            fmin: 50.0,
            fmax: 600.0,
            hop_ms: DEFAULT_HOP_MS,
            silence_rms: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PitchContour {
    /// Hz, zero where unvoiced.
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl PitchContour {
    pub fn voiced_f0(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0.iter().copied().filter(|&f| f > 0.0)
    }

    pub fn mean_voiced_f0(&self) -> Option<f64> {
        let (sum, n) = self.voiced_f0().fold((0.0, 0usize), |(s, n), f| (s + f, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.voiced.is_empty() {
            return 0.0;
        }
        self.voiced.iter().filter(|&&v| v).count() as f64 / self.voiced.len() as f64
    }
}

pub fn extract_pitch(w: &Waveform) -> PitchContour {
    extract_pitch_with(w, &PitchConfig::default())
}

/// YIN: per frame, the difference function over lags up to one `fmin`
/// period, cumulative-mean normalized; the first dip below the threshold
/// (its local minimum, refined by a parabola) gives the period. A second
/// pass replaces it by whichever sub-threshold dip lies nearest the median
/// of the first pass, which removes jumps to harmonics that dominate a
/// frame.
pub fn extract_pitch_with(w: &Waveform, cfg: &PitchConfig) -> PitchContour {
    let sr = w.sample_rate() as f64;
    let hop = ms_to_samples(cfg.hop_ms, w.sample_rate()).max(1);
    let tau_max = (sr / cfg.fmin).ceil() as usize;
    let tau_min = ((sr / cfg.fmax).floor() as usize).max(2);
    let width = tau_max;
    let span = width + tau_max + 1;
    let n_frames = w.len() / hop;
    let mut f0 = vec![0.0; n_frames];
    let mut buf = vec![0.0; span];
    let mut d = vec![0.0; tau_max + 2];
    let mut candidates = Vec::with_capacity(n_frames);
    for (i, out) in f0.iter_mut().enumerate() {
        let center = i * hop + hop / 2;
        // Keep the analysis window inside the signal where possible; zero
        // padding breaks periodicity at the edges.
        let start = (center as isize - (span / 2) as isize)
            .min(w.len() as isize - span as isize)
            .max(0);
        padded_slice(w.samples(), start, span, &mut buf);
        let energy = (buf[..width].iter().map(|x| x * x).sum::<f64>() / width as f64).sqrt();
        if energy < cfg.silence_rms {
            candidates.push(Vec::new());
            continue;
        }
        for (tau, dt) in d.iter_mut().enumerate().skip(1) {
            if tau + width > span {
                *dt = f64::INFINITY;
                continue;
            }
            *dt = (0..width).map(|j| (buf[j] - buf[j + tau]).powi(2)).sum();
        }
        // Cumulative mean normalization, d'(0) = 1.
        d[0] = 1.0;
        let mut running = 0.0;
        for tau in 1..d.len() {
            running += d[tau];
            d[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
        }
        let refine = |tau: usize| {
            if tau > 1 && tau < tau_max {
                let (a, b, c) = (d[tau - 1], d[tau], d[tau + 1]);
                let denom = a - 2.0 * b + c;
                if denom.abs() > 1e-12 {
                    return tau as f64 + 0.5 * (a - c) / denom;
                }
            }
            tau as f64
        };
        // Every dip below the threshold, in lag order.
        let cands: Vec<f64> = (tau_min..=tau_max)
            .filter(|&t| d[t] < cfg.threshold && d[t] <= d[t - 1] && (t == tau_max || d[t] <= d[t + 1]))
            .map(|t| sr / refine(t))
            .filter(|f| (cfg.fmin..=cfg.fmax).contains(f))
            .collect();
        if let Some(&first) = cands.first() {
            *out = first;
        }
        candidates.push(cands);
    }
    // Second pass: the dip nearest the utterance's median first-dip pitch.
    let mut firsts: Vec<f64> = f0.iter().copied().filter(|&f| f > 0.0).collect();
    if firsts.len() >= 5 {
        firsts.sort_by(f64::total_cmp);
        let med = firsts[firsts.len() / 2];
        for (out, cands) in f0.iter_mut().zip(&candidates) {
            if let Some(&best) = cands.iter().min_by(|a, b| (*a / med).ln().abs().total_cmp(&(*b / med).ln().abs())) {
                *out = best;
            }
        }
    }
    let voiced = f0.iter().map(|&f| f > 0.0).collect();
    PitchContour { f0, voiced }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dsp::resample_segment;

    #[test]
    fn pure_sine_at_220() {
        let w = Waveform::sine(220.0, 0.5, 0.5, 16000).unwrap();
        let p = extract_pitch(&w);
        assert_eq!(p.f0.len(), 50);
        assert!(p.voiced.iter().all(|&v| v));
        for f in p.voiced_f0() {
            assert!((f - 220.0).abs() <= 2.0, "{f}");
        }
    }

    #[test]
    fn sines_across_the_band_within_one_percent() {
        for f in [80.0, 100.0, 150.0, 220.0, 310.0, 440.0, 500.0] {
            let p = extract_pitch(&Waveform::sine(f, 0.4, 0.3, 16000).unwrap());
            assert!(p.voiced_fraction() > 0.9, "{f}: {}", p.voiced_fraction());
            for g in p.voiced_f0() {
                assert!((g - f).abs() / f <= 0.01, "{f} -> {g}");
            }
        }
    }

    #[test]
    fn quiet_white_noise_is_mostly_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..16000).map(|_| rng.random_range(-0.01..0.01)).collect();
        let p = extract_pitch(&Waveform::new(x, 16000).unwrap());
        assert!(p.voiced_fraction() <= 0.1, "{}", p.voiced_fraction());
    }

    #[test]
    fn silence_is_unvoiced() {
        let p = extract_pitch(&Waveform::silence(4000, 16000).unwrap());
        assert!(p.voiced.iter().all(|&v| !v));
        assert!(p.f0.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn double_speed_doubles_pitch() {
        let w = Waveform::sine(220.0, 0.5, 1.0, 16000).unwrap();
        let fast = Waveform::new(resample_segment(w.samples(), 0.5).unwrap(), 16000).unwrap();
        let f = extract_pitch(&fast).mean_voiced_f0().unwrap();
        assert!((f - 440.0).abs() < 4.4, "{f}");
    }

    #[test]
    fn voiced_iff_positive_and_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..8000)
            .map(|i| 0.3 * (i as f64 * 0.09).sin() + rng.random_range(-0.2..0.2))
            .collect();
        let p = extract_pitch(&Waveform::new(x, 16000).unwrap());
        for (f, v) in p.f0.iter().zip(&p.voiced) {
            assert_eq!(*f > 0.0, *v);
            if *v {
                assert!((50.0..=600.0).contains(f));
            }
        }
    }
}
