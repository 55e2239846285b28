use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::Waveform;
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

fn decode(reader: hound::WavReader<impl std::io::Read>) -> Result<Waveform> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!("{} channels (mono only)", spec.channels)));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{:?} {}-bit samples (16-bit PCM only)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Decodes a 16-bit PCM mono WAV file.
pub fn load_wav_bytes(bytes: &[u8]) -> Result<Waveform> {
    decode(hound::WavReader::new(Cursor::new(bytes))?)
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    decode(hound::WavReader::open(path)?)
}

fn spec(w: &Waveform) -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

fn quantize(s: f64) -> i16 {
    (s * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn save_wav_bytes(w: &Waveform) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec(w))?;
        for &s in w.samples() {
            writer.write_sample(quantize(s))?;
        }
        writer.finalize()?;
    }
    Ok(cursor.into_inner())
}

pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = hound::WavWriter::create(path, spec(w))?;
    for &s in w.samples() {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}
