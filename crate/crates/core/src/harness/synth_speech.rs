//! Synthetic speech: utterances built from "pseudo-phones", each a
//! harmonic source shaped by its own formant envelope, with per-utterance
//! pitch, loudness and tempo so the same content appears with many
//! acoustic realizations.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, CANONICAL_SAMPLE_RATE, DEFAULT_HOP_MS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeechSpec {
    pub num_phones: usize,
    pub num_utterances: usize,
    pub phones_per_utt: (usize, usize),
    pub phone_ms: (f64, f64),
    /// Per-utterance base pitch range in Hz.
    pub f0_hz: (f64, f64),
    pub amplitude: (f64, f64),
    /// Fraction of utterances assigned to dev and to test.
    pub dev_fraction: f64,
    pub test_fraction: f64,
    /// Seed of the phone inventory (formant tables).
    pub inventory_seed: u64,
}

impl Default for SpeechSpec {
    fn default() -> Self {
        Self {
            num_phones: 10,
            num_utterances: 200,
            phones_per_utt: (6, 10),
            phone_ms: (70.0, 150.0),
            f0_hz: (95.0, 210.0),
            amplitude: (0.15, 0.5),
            dev_fraction: 0.0,
            test_fraction: 0.2,
            inventory_seed: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phone {
    /// (center Hz, bandwidth Hz, relative gain) per formant.
    pub formants: Vec<(f64, f64, f64)>,
}

impl Phone {
    /// Linear spectral envelope at `f` Hz.
    pub fn envelope(&self, f: f64) -> f64 {
        let tilt = 1.0 / (1.0 + f / 2500.0);
        let res: f64 = self
            .formants
            .iter()
            .map(|&(c, b, g)| g / (1.0 + ((f - c) / b).powi(2)))
            .sum();
        tilt * (0.03 + res)
    }
}

/// Formant tables spread over the vowel space so phones are distinct.
pub fn phone_inventory(n: usize, seed: u64) -> Vec<Phone> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phones: Vec<Phone> = Vec::with_capacity(n);
    while phones.len() < n {
        let f1 = rng.random_range(280.0..900.0);
        let f2 = rng.random_range(900.0..2600.0f64).max(f1 + 400.0);
        let f3 = rng.random_range(2500.0..3600.0f64).max(f2 + 400.0);
        let cand = Phone {
            formants: vec![
                (f1, rng.random_range(60.0..110.0), 1.0),
                (f2, rng.random_range(80.0..150.0), rng.random_range(0.4..0.9)),
                (f3, rng.random_range(120.0..220.0), rng.random_range(0.15..0.4)),
            ],
        };
        // Keep phones apart in (F1, F2) so they are separable by envelope.
        let far = phones.iter().all(|p| {
            let d1 = (p.formants[0].0 - f1) / 150.0;
            let d2 = (p.formants[1].0 - cand.formants[1].0) / 350.0;
            d1 * d1 + d2 * d2 > 1.0
        });
        if far {
            phones.push(cand);
        }
    }
    phones
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthUtterance {
    pub utt_id: String,
    pub audio: Waveform,
    pub phones: Vec<usize>,
    /// Phone id of every 10 ms frame.
    pub frame_labels: Vec<usize>,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct SpeechCorpus {
    pub inventory: Vec<Phone>,
    pub utterances: Vec<SynthUtterance>,
}

impl SpeechCorpus {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &SynthUtterance> {
        self.utterances.iter().filter(move |u| u.split == s)
    }
}

/// Renders a phone string with prosody drawn from `rng`; returns the audio
/// and the phone label of every 10 ms frame.
pub fn render_utterance(inventory: &[Phone], phones: &[usize], spec: &SpeechSpec, rng: &mut impl Rng) -> (Waveform, Vec<usize>) {
    let sr = CANONICAL_SAMPLE_RATE as f64;
    let base_f0 = rng.random_range(spec.f0_hz.0..spec.f0_hz.1);
    let loud = rng.random_range(spec.amplitude.0..spec.amplitude.1);
    let tempo = rng.random_range(0.85..1.15);
    // Declination and accents never take f0 below 40 Hz.
    let max_h = (7600.0f64 / 40.0) as usize;
    let mut amps = vec![0.0; max_h + 1];
    let mut samples = Vec::new();
    let mut ends = Vec::with_capacity(phones.len());
    let mut phase = 0.0f64;
    let ramp = 0.01 * sr;
    for (i, &p) in phones.iter().enumerate() {
        let n = (rng.random_range(spec.phone_ms.0..spec.phone_ms.1) * tempo / 1000.0 * sr) as usize;
        let tok_amp = rng.random_range(0.7..1.0);
        // Declination across the utterance plus a per-token accent.
        let f_start = base_f0 * (1.0 - 0.15 * i as f64 / phones.len() as f64) * rng.random_range(0.93..1.07);
        let f_end = f_start * rng.random_range(0.95..1.05);
        for j in 0..n {
            let f0 = f_start + (f_end - f_start) * j as f64 / n as f64;
            phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
            if j % 32 == 0 {
                for (h, a) in amps.iter_mut().enumerate().skip(1) {
                    let fh = h as f64 * f0;
                    *a = if fh < 7600.0 { inventory[p].envelope(fh) } else { 0.0 };
                }
            }
            let s: f64 = amps
                .iter()
                .enumerate()
                .skip(1)
                .take_while(|(_, &a)| a > 0.0)
                .map(|(h, &a)| a * (h as f64 * phase).sin())
                .sum();
            let edge = (j.min(n - 1 - j) as f64 / ramp).min(1.0);
            samples.push(s * tok_amp * (0.6 + 0.4 * edge));
        }
        ends.push(samples.len());
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    samples.iter_mut().for_each(|s| *s *= loud / peak);
    let hop = (DEFAULT_HOP_MS / 1000.0 * sr) as usize;
    let labels = (0..samples.len() / hop)
        .map(|f| {
            let center = f * hop + hop / 2;
            let tok = ends.iter().position(|&e| center < e).unwrap_or(phones.len() - 1);
            phones[tok]
        })
        .collect();
    (Waveform::new(samples, CANONICAL_SAMPLE_RATE).expect("finite synthesis"), labels)
}

/// Draws phone strings and prosody. Utterance ids are `utt{index:04}`.
pub fn gen_speech_corpus(spec: &SpeechSpec, seed: u64) -> Result<SpeechCorpus> {
    if spec.num_phones < 2 || spec.num_utterances == 0 {
        return Err(Error::Config("need at least 2 phones and 1 utterance".into()));
    }
    let (lo, hi) = spec.phones_per_utt;
    if lo == 0 || lo > hi || !(spec.phone_ms.0 > 20.0 && spec.phone_ms.0 < spec.phone_ms.1) {
        return Err(Error::Config("bad phone count or duration range".into()));
    }
    if !(spec.f0_hz.0 >= 50.0 && spec.f0_hz.0 < spec.f0_hz.1 && spec.f0_hz.1 <= 400.0) {
        return Err(Error::Config("f0 range must lie in [50, 400] Hz".into()));
    }
    let inventory = phone_inventory(spec.num_phones, spec.inventory_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_test = (spec.num_utterances as f64 * spec.test_fraction).round() as usize;
    let n_dev = (spec.num_utterances as f64 * spec.dev_fraction).round() as usize;
    let n_train = spec.num_utterances.saturating_sub(n_test + n_dev);
    let utterances = (0..spec.num_utterances)
        .map(|i| {
            let len = rng.random_range(lo..=hi);
            let mut phones: Vec<usize> = Vec::with_capacity(len);
            while phones.len() < len {
                let p = rng.random_range(0..spec.num_phones);
                if phones.last() != Some(&p) {
                    phones.push(p);
                }
            }
            let (audio, frame_labels) = render_utterance(&inventory, &phones, spec, &mut rng);
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            };
            SynthUtterance {
                utt_id: format!("utt{i:04}"),
                audio,
                phones,
                frame_labels,
                split,
            }
        })
        .collect();
    Ok(SpeechCorpus { inventory, utterances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{mel_spectrogram, MelConfig};
    use crate::nn::Mat;
    use crate::unitizer::{collapse_units, quantize, Codebook};

    #[test]
    fn same_seed_gives_identical_corpus() {
        let spec = SpeechSpec {
            num_utterances: 5,
            ..SpeechSpec::default()
        };
        let a = gen_speech_corpus(&spec, 9).unwrap();
        let b = gen_speech_corpus(&spec, 9).unwrap();
        for (x, y) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(x.audio.samples(), y.audio.samples());
            assert_eq!(x.frame_labels, y.frame_labels);
        }
        let c = gen_speech_corpus(&spec, 10).unwrap();
        assert_ne!(a.utterances[0].audio.samples(), c.utterances[0].audio.samples());
    }

    #[test]
    fn default_corpus_has_labels_for_every_frame() {
        let c = gen_speech_corpus(&SpeechSpec::default(), 1).unwrap();
        assert_eq!(c.utterances.len(), 200);
        assert_eq!(c.split(Split::Test).count(), 40);
        for u in &c.utterances {
            assert_eq!(u.frame_labels.len(), u.audio.len() / 160);
            assert_eq!(collapse_units(&u.frame_labels), u.phones);
        }
    }

    /// Log-mel frames with the per-frame mean removed, so loudness drops out.
    fn shapes(w: &Waveform) -> Mat {
        let mut m = mel_spectrogram(w, &MelConfig::default()).unwrap().frames;
        for r in 0..m.rows() {
            let row = m.row_mut(r);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter_mut().for_each(|v| *v -= mean);
        }
        m
    }

    #[test]
    fn same_phones_with_new_prosody_give_same_oracle_units() {
        let spec = SpeechSpec::default();
        let inv = phone_inventory(spec.num_phones, spec.inventory_seed);
        let phones = [0, 3, 1, 4, 2, 5, 9, 7, 6, 8];
        let mut renders = Vec::new();
        for seed in [1, 2] {
            let (w, labels) = render_utterance(&inv, &phones, &spec, &mut ChaCha8Rng::seed_from_u64(seed));
            renders.push((shapes(&w), labels));
        }
        // Oracle codebook: per-phone mean frame shape over both renderings.
        let dim = renders[0].0.cols();
        let mut sums = Mat::zeros(spec.num_phones, dim);
        let mut counts = vec![0.0f64; spec.num_phones];
        for (m, labels) in &renders {
            for (f, &l) in labels.iter().enumerate().take(m.rows()) {
                counts[l] += 1.0;
                for (s, v) in sums.row_mut(l).iter_mut().zip(m.row(f)) {
                    *s += v;
                }
            }
        }
        for p in 0..spec.num_phones {
            let c = counts[p].max(1.0);
            sums.row_mut(p).iter_mut().for_each(|v| *v /= c);
        }
        let cb = Codebook::new(sums).unwrap();
        let units: Vec<Vec<usize>> = renders.iter().map(|(m, _)| collapse_units(&quantize(m, &cb).unwrap())).collect();
        assert_eq!(units[0], units[1]);
        assert_eq!(units[0], phones);
    }
}
