//! JSON-lines corpus manifests.
//!
//! One record per clip. Audio is either a WAV file path relative to the
//! manifest's directory or an inline synthesis origin.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::wav::{read_wav, write_wav};
use super::{synthesize_clip, Clip, Corpus, SynthOrigin, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthOrigin>,
    pub duration_s: f64,
    #[serde(default)]
    pub speaker_id: Option<String>,
    #[serde(default)]
    pub transcription: Option<String>,
    pub generator_label: u32,
}

/// How clip audio is stored next to a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AudioStorage {
    /// Every clip is written as `audio/<n>_<id>.wav`.
    #[default]
    Wav,
    /// Synthesized clips store their origin; others fall back to WAV.
    Inline,
}

pub fn save_manifest(corpus: &Corpus, path: &Path) -> Result<()> {
    save_manifest_with(corpus, path, AudioStorage::Wav)
}

pub fn save_manifest_with(corpus: &Corpus, path: &Path, storage: AudioStorage) -> Result<()> {
    let base = manifest_dir(path);
    let audio_dir = base.join("audio");
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, clip) in corpus.clips().iter().enumerate() {
        let (audio, synth) = match (storage, clip.origin) {
            (AudioStorage::Inline, Some(origin)) => (None, Some(origin)),
            _ => {
                std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
                let rel = format!("audio/{i:05}_{}.wav", sanitize(&clip.id));
                write_wav(&base.join(&rel), clip.samples(), clip.sample_rate)?;
                (Some(rel), None)
            }
        };
        let record = ManifestRecord {
            id: clip.id.clone(),
            audio,
            synth,
            duration_s: clip.duration_s(),
            speaker_id: clip.speaker_id.clone(),
            transcription: clip.transcription.clone(),
            generator_label: clip.generator_label,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads a manifest, decoding or re-synthesizing audio and checking every
/// record's duration against its audio to within one sample period.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let base = manifest_dir(path);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut clips = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let (samples, sample_rate, origin) = match (&record.audio, &record.synth) {
            (Some(rel), None) => {
                let (samples, sr) = read_wav(&base.join(rel))?;
                (samples, sr, None)
            }
            (None, Some(origin)) => {
                let clip = synthesize_clip(origin)?;
                (clip.samples().to_vec(), SAMPLE_RATE, Some(*origin))
            }
            _ => {
                return Err(parse_err(
                    "record needs exactly one of `audio` or `synth`".into(),
                ))
            }
        };
        let mut clip = Clip::new(record.id, samples, sample_rate)?;
        let period = 1.0 / f64::from(sample_rate);
        if (clip.duration_s() - record.duration_s).abs() > period + 1e-12 {
            return Err(Error::Integrity(format!(
                "{}:{line_no}: clip {} declares {} s but audio is {} s",
                path.display(),
                clip.id,
                record.duration_s,
                clip.duration_s()
            )));
        }
        clip.speaker_id = record.speaker_id;
        clip.transcription = record.transcription;
        clip.generator_label = record.generator_label;
        clip.origin = origin;
        clips.push(clip);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::new(name, clips)
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
