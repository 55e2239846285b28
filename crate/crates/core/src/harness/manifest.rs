//! Corpus manifests (one JSON object per line) and on-disk speech corpora.
//!
//! Audio paths are stored relative to the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth_speech::{Phone, Split, SpeechCorpus};
use crate::dsp::{load_wav, save_wav, Waveform};
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ALIGNMENT_FILE: &str = "alignments.jsonl";
pub const INVENTORY_FILE: &str = "inventory.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub utt_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<usize>>,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory relative audio paths resolve against.
    pub base: PathBuf,
}

impl Manifest {
    /// Rejects duplicate utterance ids.
    pub fn new(rows: Vec<ManifestRow>, base: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.utt_id.as_str()) {
                return Err(Error::Input(format!("duplicate utt_id {:?}", r.utt_id)));
            }
        }
        Ok(Self { rows, base: base.into() })
    }

    /// Loads and checks that ids are unique and every audio file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rows: Vec<ManifestRow> = read_jsonl(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::new(rows, base)?;
        for r in &m.rows {
            if let Some(p) = m.audio_path(r) {
                if !p.is_file() {
                    return Err(Error::Input(format!("{}: missing audio {}", r.utt_id, p.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.rows)
    }

    pub fn audio_path(&self, row: &ManifestRow) -> Option<PathBuf> {
        row.audio.as_ref().map(|a| self.base.join(a))
    }

    pub fn load_audio(&self, row: &ManifestRow) -> Result<Waveform> {
        let p = self
            .audio_path(row)
            .ok_or_else(|| Error::Input(format!("{} has no audio", row.utt_id)))?;
        load_wav(p)
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == s)
    }
}

/// Ground-truth phone content of one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub utt_id: String,
    pub phones: Vec<usize>,
    /// Phone id per 10 ms frame.
    pub frame_labels: Vec<usize>,
}

/// Writes `wav/<utt_id>.wav`, the manifest, the alignments and the phone
/// inventory under `dir`.
pub fn write_speech_corpus(corpus: &SpeechCorpus, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("wav"))?;
    let mut rows = Vec::with_capacity(corpus.utterances.len());
    let mut aligns = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        let rel = format!("wav/{}.wav", u.utt_id);
        save_wav(&u.audio, dir.join(&rel))?;
        rows.push(ManifestRow {
            utt_id: u.utt_id.clone(),
            audio: Some(rel),
            units: None,
            split: u.split,
        });
        aligns.push(Alignment {
            utt_id: u.utt_id.clone(),
            phones: u.phones.clone(),
            frame_labels: u.frame_labels.clone(),
        });
    }
    let m = Manifest::new(rows, dir)?;
    m.save(dir.join(MANIFEST_FILE))?;
    write_jsonl(dir.join(ALIGNMENT_FILE), &aligns)?;
    std::fs::write(dir.join(INVENTORY_FILE), serde_json::to_string_pretty(&corpus.inventory)?)?;
    Ok(m)
}

pub fn read_alignments(dir: impl AsRef<Path>) -> Result<Vec<Alignment>> {
    read_jsonl(dir.as_ref().join(ALIGNMENT_FILE))
}

pub fn read_inventory(dir: impl AsRef<Path>) -> Result<Vec<Phone>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.as_ref().join(INVENTORY_FILE))?)?)
}
