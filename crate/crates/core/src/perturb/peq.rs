use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_log_uniform, sample_uniform, PeqParams};
use crate::dsp::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    LowShelf,
    Peaking,
    HighShelf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeqBand {
    pub kind: BandKind,
    pub freq_hz: f64,
    pub gain_db: f64,
    pub q: f64,
}

/// Shelves use a fixed Butterworth-like Q; only peaking bands draw Q.
const SHELF_Q: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Draws the band list in filter order: low shelf, peaking bands, high shelf.
pub fn sample_peq<R: Rng + ?Sized>(rng: &mut R, sample_rate: u32, p: &PeqParams) -> Vec<PeqBand> {
    let f_hi = p.freq_max_fraction * sample_rate as f64;
    let draw = |kind, rng: &mut R| PeqBand {
        kind,
        freq_hz: sample_log_uniform(rng, p.freq_min_hz, f_hi),
        gain_db: sample_uniform(rng, p.gain_db_range),
        q: if kind == BandKind::Peaking { sample_uniform(rng, p.q_range) } else { SHELF_Q },
    };
    let mut bands = Vec::with_capacity(p.low_shelf + p.num_peaking + p.high_shelf);
    for _ in 0..p.low_shelf {
        bands.push(draw(BandKind::LowShelf, rng));
    }
    for _ in 0..p.num_peaking {
        bands.push(draw(BandKind::Peaking, rng));
    }
    for _ in 0..p.high_shelf {
        bands.push(draw(BandKind::HighShelf, rng));
    }
    bands
}

/// Normalized biquad coefficients `[b0, b1, b2, a1, a2]`.
fn coefficients(band: &PeqBand, sample_rate: u32) -> [f64; 5] {
    let a = 10f64.powf(band.gain_db / 40.0);
    let w0 = 2.0 * PI * band.freq_hz / sample_rate as f64;
    let (sn, cs) = w0.sin_cos();
    let alpha = sn / (2.0 * band.q);
    let sa = 2.0 * a.sqrt() * alpha;
    let (b0, b1, b2, a0, a1, a2) = match band.kind {
        BandKind::Peaking => (
            1.0 + alpha * a,
            -2.0 * cs,
            1.0 - alpha * a,
            1.0 + alpha / a,
            -2.0 * cs,
            1.0 - alpha / a,
        ),
        BandKind::LowShelf => (
            a * ((a + 1.0) - (a - 1.0) * cs + sa),
            2.0 * a * ((a - 1.0) - (a + 1.0) * cs),
            a * ((a + 1.0) - (a - 1.0) * cs - sa),
            (a + 1.0) + (a - 1.0) * cs + sa,
            -2.0 * ((a - 1.0) + (a + 1.0) * cs),
            (a + 1.0) + (a - 1.0) * cs - sa,
        ),
        BandKind::HighShelf => (
            a * ((a + 1.0) + (a - 1.0) * cs + sa),
            -2.0 * a * ((a - 1.0) + (a + 1.0) * cs),
            a * ((a + 1.0) + (a - 1.0) * cs - sa),
            (a + 1.0) - (a - 1.0) * cs + sa,
            2.0 * ((a - 1.0) - (a + 1.0) * cs),
            (a + 1.0) - (a - 1.0) * cs - sa,
        ),
    };
    [b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0]
}

/// Runs the second-order sections in series (direct form I).
pub fn apply_peq(w: &Waveform, bands: &[PeqBand]) -> Waveform {
    let mut x = w.samples().to_vec();
    for band in bands {
        let [b0, b1, b2, a1, a2] = coefficients(band, w.sample_rate());
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for s in x.iter_mut() {
            let y = b0 * *s + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = *s;
            y2 = y1;
            y1 = y;
            *s = y;
        }
    }
    w.with_samples(x).expect("stable sections keep samples finite")
}

pub fn parametric_eq<R: Rng + ?Sized>(w: &Waveform, p: &PeqParams, rng: &mut R) -> Waveform {
    let bands = sample_peq(rng, w.sample_rate(), p);
    apply_peq(w, &bands)
}

/// Magnitude response in dB of the cascade at `freq_hz`.
pub fn response_db(bands: &[PeqBand], sample_rate: u32, freq_hz: f64) -> f64 {
    let w = 2.0 * PI * freq_hz / sample_rate as f64;
    let z1 = rustfft::num_complex::Complex::from_polar(1.0, -w);
    let z2 = z1 * z1;
    bands
        .iter()
        .map(|b| {
            let [b0, b1, b2, a1, a2] = coefficients(b, sample_rate);
            let h = (z1 * b1 + z2 * b2 + b0) / (z1 * a1 + z2 * a2 + 1.0);
            20.0 * h.norm().log10()
        })
        .sum()
}
