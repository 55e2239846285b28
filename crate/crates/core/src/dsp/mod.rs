//! Audio primitives shared by the perturbation, unit and model code.

mod energy;
mod mel;
mod pitch;
mod resample;
pub mod stft;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use energy::{frame_rms, rms_energy, EnergyContour};
pub use mel::{mel_spectrogram, MelConfig, MelSpectrogram, LOG_FLOOR};
pub use pitch::{extract_pitch, extract_pitch_with, PitchConfig, PitchContour};
pub use resample::resample_segment;
pub use wav::{load_wav, load_wav_bytes, save_wav, save_wav_bytes};

pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_HOP_MS: f64 = 10.0;
pub const DEFAULT_WIN_MS: f64 = 25.0;
pub const DEFAULT_NUM_MELS: usize = 80;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput("waveform has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(num_samples: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; num_samples], sample_rate)
    }

    pub fn sine(freq: f64, amplitude: f64, seconds: f64, sample_rate: u32) -> Result<Self> {
        let n = (seconds * sample_rate as f64).round() as usize;
        let w = 2.0 * std::f64::consts::PI * freq / sample_rate as f64;
        Self::new((0..n).map(|i| amplitude * (w * i as f64).sin()).collect(), sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Same sample rate, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn require_canonical_rate(&self) -> Result<()> {
        if self.sample_rate != CANONICAL_SAMPLE_RATE {
            return Err(Error::UnsupportedFormat(format!(
                "sample rate {} Hz (expected {CANONICAL_SAMPLE_RATE} Hz)",
                self.sample_rate
            )));
        }
        Ok(())
    }

    /// Number of samples in one analysis hop of `hop_ms`.
    pub fn hop_samples(&self, hop_ms: f64) -> usize {
        ms_to_samples(hop_ms, self.sample_rate)
    }
}

pub fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

/// One JSON-lines record of a per-utterance feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub utt_id: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureRecord {
    pub fn from_mat(utt_id: impl Into<String>, m: &crate::nn::Mat) -> Self {
        Self {
            utt_id: utt_id.into(),
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().to_vec(),
        }
    }

    pub fn from_column(utt_id: impl Into<String>, values: &[f64]) -> Self {
        Self {
            utt_id: utt_id.into(),
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn to_mat(&self) -> Result<crate::nn::Mat> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::Shape(format!(
                "record {}: {}x{} does not match {} values",
                self.utt_id,
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(crate::nn::Mat::from_vec(self.rows, self.cols, self.data.clone()))
    }
}
