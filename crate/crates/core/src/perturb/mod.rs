//! Style normalization of targets and information-enhancing perturbations
//! of inputs.

mod energy;
mod peq;
mod rhythm;
pub mod spectral;
mod style;

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{extract_pitch, Waveform};
use crate::error::{Error, Result};

pub use energy::{energy_perturb, energy_perturb_with, gain_curve, limit_peak, PEAK_LIMIT};
pub use peq::{apply_peq, parametric_eq, response_db, sample_peq, BandKind, PeqBand};
pub use rhythm::{num_analysis_frames, plan_segments, random_resample, random_resample_with, Segment};
pub use style::{compute_style_stats, style_normalize, StyleStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeqParams {
    pub num_peaking: usize,
    pub low_shelf: usize,
    pub high_shelf: usize,
    pub gain_db_range: (f64, f64),
    pub q_range: (f64, f64),
    pub freq_min_hz: f64,
    /// Upper center frequency as a fraction of the sample rate.
    pub freq_max_fraction: f64,
}

impl Default for PeqParams {
    fn default() -> Self {
        Self {
            num_peaking: 8,
            low_shelf: 1,
            high_shelf: 1,
            gain_db_range: (-12.0, 12.0),
            q_range: (2.0, 5.0),
            freq_min_hz: 60.0,
            freq_max_fraction: 0.45,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbParams {
    pub formant_ratio_range: (f64, f64),
    pub pitch_shift_range: (f64, f64),
    pub pitch_range_range: (f64, f64),
    /// Chance of using the reciprocal of each sampled ratio.
    pub reciprocal_prob: f64,
    /// Inclusive, in 10 ms frames.
    pub rr_segment_frames: (usize, usize),
    pub rr_factor_range: (f64, f64),
    pub peq: PeqParams,
    pub energy_gain_db_range: (f64, f64),
    pub energy_crossfade_ms: f64,
    pub seed: u64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self {
            formant_ratio_range: (1.0, 1.4),
            pitch_shift_range: (1.0, 2.0),
            pitch_range_range: (1.0, 1.5),
            reciprocal_prob: 0.5,
            rr_segment_frames: (19, 32),
            rr_factor_range: (0.5, 1.5),
            peq: PeqParams::default(),
            energy_gain_db_range: (-6.0, 6.0),
            energy_crossfade_ms: 50.0,
            seed: 0,
        }
    }
}

impl PerturbParams {
    pub fn validate(&self) -> Result<()> {
        let ordered = [
            ("formant_ratio_range", self.formant_ratio_range),
            ("pitch_shift_range", self.pitch_shift_range),
            ("pitch_range_range", self.pitch_range_range),
            ("rr_factor_range", self.rr_factor_range),
            ("peq.gain_db_range", self.peq.gain_db_range),
            ("peq.q_range", self.peq.q_range),
            ("energy_gain_db_range", self.energy_gain_db_range),
        ];
        for (name, (lo, hi)) in ordered {
            if !(lo <= hi) {
                return Err(Error::Parameter(format!("{name}: {lo} > {hi}")));
            }
        }
        let positive = [
            self.formant_ratio_range.0,
            self.pitch_shift_range.0,
            self.pitch_range_range.0,
            self.rr_factor_range.0,
            self.peq.q_range.0,
        ];
        if positive.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Parameter("ratio, factor and Q ranges must be positive".into()));
        }
        let (lo, hi) = self.rr_segment_frames;
        if lo == 0 || lo > hi {
            return Err(Error::Parameter(format!("rr_segment_frames: bad range ({lo}, {hi})")));
        }
        if self.peq.num_peaking != 8 {
            return Err(Error::Parameter(format!(
                "peq.num_peaking must be 8, got {}",
                self.peq.num_peaking
            )));
        }
        if !(0.0..=1.0).contains(&self.reciprocal_prob) {
            return Err(Error::Parameter("reciprocal_prob must be in [0, 1]".into()));
        }
        if !(self.peq.freq_min_hz > 0.0 && self.peq.freq_max_fraction < 0.5) {
            return Err(Error::Parameter("peq frequency range must lie in (0, nyquist)".into()));
        }
        Ok(())
    }
}

pub(crate) fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub(crate) fn sample_log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    sample_uniform(rng, (lo.ln(), hi.ln())).exp()
}

/// Uniform ratio from `range`, replaced by its reciprocal with probability `p`.
pub fn sample_ratio<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64), p: f64) -> f64 {
    let r = sample_uniform(rng, range);
    if rng.random_bool(p) {
        1.0 / r
    } else {
        r
    }
}

/// Warps the spectral envelope's frequency axis by `ratio`, keeping the
/// excitation and duration.
pub fn formant_shift_with(w: &Waveform, ratio: f64) -> Waveform {
    spectral::shift_pitch_and_formants(w, &[1.0], ratio)
}

pub fn formant_shift<R: Rng + ?Sized>(w: &Waveform, p: &PerturbParams, rng: &mut R) -> Waveform {
    let ratio = sample_ratio(rng, p.formant_ratio_range, p.reciprocal_prob);
    formant_shift_with(w, ratio)
}

/// Per-frame pitch ratios that scale the contour by `shift` and its
/// deviations from the utterance mean by `range`:
/// `f0' = shift * (mean + range * (f0 - mean))`. Unvoiced frames get `shift`.
pub fn pitch_ratios(w: &Waveform, shift: f64, range: f64) -> Vec<f64> {
    let contour = extract_pitch(w);
    let Some(mean) = contour.mean_voiced_f0() else {
        return vec![shift];
    };
    let per_pitch_frame: Vec<f64> = contour
        .f0
        .iter()
        .map(|&f| if f > 0.0 { shift * (1.0 + (range - 1.0) * (f - mean) / f) } else { shift })
        .collect();
    if per_pitch_frame.is_empty() {
        return vec![shift];
    }
    (0..num_analysis_frames(w))
        .map(|t| per_pitch_frame[t.min(per_pitch_frame.len() - 1)])
        .collect()
}

pub fn pitch_randomize_with(w: &Waveform, shift: f64, range: f64) -> Waveform {
    spectral::shift_pitch_and_formants(w, &pitch_ratios(w, shift, range), 1.0)
}

pub fn pitch_randomize<R: Rng + ?Sized>(w: &Waveform, p: &PerturbParams, rng: &mut R) -> Waveform {
    let shift = sample_ratio(rng, p.pitch_shift_range, p.reciprocal_prob);
    let range = sample_ratio(rng, p.pitch_range_range, p.reciprocal_prob);
    pitch_randomize_with(w, shift, range)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    Rhythm,
    Pitch,
    Energy,
    Full,
}

impl PerturbMode {
    pub const FAMILIES: [PerturbMode; 3] = [PerturbMode::Rhythm, PerturbMode::Pitch, PerturbMode::Energy];

    pub fn name(self) -> &'static str {
        match self {
            PerturbMode::Rhythm => "rhythm",
            PerturbMode::Pitch => "pitch",
            PerturbMode::Energy => "energy",
            PerturbMode::Full => "full",
        }
    }
}

impl FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rhythm" => Ok(PerturbMode::Rhythm),
            "pitch" => Ok(PerturbMode::Pitch),
            "energy" => Ok(PerturbMode::Energy),
            "full" => Ok(PerturbMode::Full),
            other => Err(Error::Parameter(format!(
                "unknown perturbation mode {other:?} (rhythm, pitch, energy, full)"
            ))),
        }
    }
}

impl std::fmt::Display for PerturbMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `pitch` is formant shift after pitch randomization after PEQ; `full`
/// adds random resampling and then energy on top of that.
pub fn enhance_chain<R: Rng + ?Sized>(
    w: &Waveform,
    params: &PerturbParams,
    mode: PerturbMode,
    rng: &mut R,
) -> Result<Waveform> {
    params.validate()?;
    let pitch_family = |w: &Waveform, rng: &mut R| {
        let x = parametric_eq(w, &params.peq, rng);
        let x = pitch_randomize(&x, params, rng);
        formant_shift(&x, params, rng)
    };
    let out = match mode {
        PerturbMode::Rhythm => random_resample(w, params, rng),
        PerturbMode::Energy => energy_perturb(w, params, rng),
        PerturbMode::Pitch => pitch_family(w, rng),
        PerturbMode::Full => {
            let x = pitch_family(w, rng);
            let x = random_resample(&x, params, rng);
            energy_perturb(&x, params, rng)
        }
    };
    Ok(limit_peak(out))
}

/// Per-utterance seed: FNV-1a over the global seed and the utterance id.
pub fn utterance_seed(seed: u64, utt_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(utt_id.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
