use super::{ms_to_samples, Waveform, DEFAULT_HOP_MS, DEFAULT_WIN_MS};

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyContour {
    pub rms: Vec<f64>,
}

pub fn rms_energy(w: &Waveform) -> f64 {
    let s = w.samples();
    (s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64).sqrt()
}

/// RMS over a 25 ms window centered on each 10 ms hop, counting only
/// samples inside the signal.
pub fn frame_rms(w: &Waveform) -> EnergyContour {
    let sr = w.sample_rate();
    let hop = ms_to_samples(DEFAULT_HOP_MS, sr).max(1);
    let win = ms_to_samples(DEFAULT_WIN_MS, sr).max(1);
    let s = w.samples();
    let rms = (0..s.len() / hop)
        .map(|i| {
            let center = i * hop + hop / 2;
            let lo = center.saturating_sub(win / 2);
            let hi = (center + win - win / 2).min(s.len());
            let seg = &s[lo..hi];
            (seg.iter().map(|x| x * x).sum::<f64>() / seg.len() as f64).sqrt()
        })
        .collect();
    EnergyContour { rms }
}
