use serde::{Deserialize, Serialize};

use super::spectral::shift_pitch_and_formants;
use crate::dsp::{extract_pitch, rms_energy, Waveform};
use crate::error::{Error, Result};

/// Dataset-average voiced pitch and utterance energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleStats {
    pub mean_f0: f64,
    pub mean_rms: f64,
}

impl StyleStats {
    pub fn validate(&self) -> Result<()> {
        if !(50.0..=600.0).contains(&self.mean_f0) {
            return Err(Error::Stats(format!("mean_f0 {} outside [50, 600] Hz", self.mean_f0)));
        }
        if !(self.mean_rms > 0.0) || !self.mean_rms.is_finite() {
            return Err(Error::Stats(format!("mean_rms must be positive, got {}", self.mean_rms)));
        }
        Ok(())
    }
}

/// Mean voiced f0 over every frame of every utterance, and mean
/// utterance RMS.
pub fn compute_style_stats(corpus: &[Waveform]) -> Result<StyleStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("style statistics need at least one utterance".into()));
    }
    let (mut f0_sum, mut voiced) = (0.0, 0usize);
    let mut rms_sum = 0.0;
    for w in corpus {
        let p = extract_pitch(w);
        for f in p.voiced_f0() {
            f0_sum += f;
            voiced += 1;
        }
        rms_sum += rms_energy(w);
    }
    if voiced == 0 {
        return Err(Error::Stats("corpus has no voiced frames".into()));
    }
    let stats = StyleStats {
        mean_f0: f0_sum / voiced as f64,
        mean_rms: rms_sum / corpus.len() as f64,
    };
    stats.validate()?;
    Ok(stats)
}

/// Shifts the utterance's mean voiced pitch to `stats.mean_f0` (formants
/// kept) and scales its RMS to `stats.mean_rms`. Unvoiced input only gets
/// the energy step.
pub fn style_normalize(w: &Waveform, stats: &StyleStats) -> Waveform {
    let shifted = match extract_pitch(w).mean_voiced_f0() {
        Some(f) => shift_pitch_and_formants(w, &[stats.mean_f0 / f], 1.0),
        None => w.clone(),
    };
    let rms = rms_energy(&shifted);
    if rms > 0.0 {
        shifted.scaled(stats.mean_rms / rms)
    } else {
        shifted
    }
}
