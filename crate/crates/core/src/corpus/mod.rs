//! Clips, synthetic corpora, and the length preprocessing rules applied before
//! any clip is sent to the victim.

mod manifest;
mod synth;
pub mod wav;

use std::collections::HashSet;

pub use manifest::{load_manifest, save_manifest, save_manifest_with, AudioStorage, ManifestRecord};
pub use synth::{generate_corpus, synthesize_clip, SynthOrigin};

use crate::error::{Error, Result};

/// Every clip in the bench is 16 kHz mono.
pub const SAMPLE_RATE: u32 = 16_000;

/// Longest clip the victim accepts and the attacker-side split length, in seconds.
pub const MAX_CLIP_SECONDS: f64 = 15.6;

/// Clips (and split remainders) shorter than this are dropped, in seconds.
pub const MIN_CLIP_SECONDS: f64 = 2.0;

/// One mono audio segment with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    samples: Vec<f32>,
    pub sample_rate: u32,
    pub speaker_id: Option<String>,
    pub transcription: Option<String>,
    /// Synthetic ground-truth class (the generating speaker's index).
    pub generator_label: u32,
    /// Set for synthesized clips so manifests can store a seed instead of audio.
    pub origin: Option<SynthOrigin>,
}

impl Clip {
    pub fn new(id: impl Into<String>, samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() {
            return Err(Error::input(format!("clip {id} has no samples")));
        }
        if let Some(pos) = samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::input(format!(
                "clip {id}: sample {pos} = {} is not a finite value in [-1, 1]",
                samples[pos]
            )));
        }
        if sample_rate == 0 {
            return Err(Error::param("sample rate must be positive"));
        }
        Ok(Self {
            id,
            samples,
            sample_rate,
            speaker_id: None,
            transcription: None,
            generator_label: 0,
            origin: None,
        })
    }

    pub fn with_speaker(mut self, speaker_id: impl Into<String>) -> Self {
        self.speaker_id = Some(speaker_id.into());
        self
    }

    pub fn with_transcription(mut self, text: impl Into<String>) -> Self {
        self.transcription = Some(text.into());
        self
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.generator_label = label;
        self
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Samples widened to `f64` for the numeric code paths.
    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| f64::from(s)).collect()
    }

    fn chunk(&self, k: usize, start: usize, end: usize) -> Clip {
        Clip {
            id: format!("{}#{k}", self.id),
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
            speaker_id: self.speaker_id.clone(),
            transcription: self.transcription.clone(),
            generator_label: self.generator_label,
            origin: self.origin.as_ref().map(|o| o.slice(start, end - start)),
        }
    }
}

/// An ordered collection of clips with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    clips: Vec<Clip>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, clips: Vec<Clip>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(clips.len());
        for c in &clips {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate clip id {}", c.id)));
            }
        }
        Ok(Self {
            name: name.into(),
            clips,
        })
    }

    pub fn clips(&self) -> &[Clip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Clip> {
        self.clips.iter().find(|c| c.id == id)
    }

    pub fn total_duration_s(&self) -> f64 {
        total_duration(&self.clips)
    }

    /// Keeps the clips for which `keep` holds, preserving order.
    pub fn filter(&self, name: impl Into<String>, mut keep: impl FnMut(&Clip) -> bool) -> Corpus {
        Corpus {
            name: name.into(),
            clips: self.clips.iter().filter(|c| keep(c)).cloned().collect(),
        }
    }

    /// Clips with the given ids, in the order of `ids`.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<&Clip>> {
        ids.iter()
            .map(|id| {
                self.get(id.as_ref())
                    .ok_or_else(|| Error::param(format!("unknown clip id {}", id.as_ref())))
            })
            .collect()
    }
}

/// Sum of clip durations in seconds, the unit the query budget is charged in.
pub fn total_duration<'a>(clips: impl IntoIterator<Item = &'a Clip>) -> f64 {
    clips.into_iter().map(Clip::duration_s).sum()
}

/// Length limits applied before querying.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthLimits {
    pub max_len_s: f64,
    pub min_len_s: f64,
}

impl Default for LengthLimits {
    fn default() -> Self {
        Self {
            max_len_s: MAX_CLIP_SECONDS,
            min_len_s: MIN_CLIP_SECONDS,
        }
    }
}

impl LengthLimits {
    /// Largest allowed sample count.
    pub fn max_samples(&self, sample_rate: u32) -> usize {
        (self.max_len_s * f64::from(sample_rate) + 1e-9).floor() as usize
    }

    /// Smallest allowed sample count.
    pub fn min_samples(&self, sample_rate: u32) -> usize {
        ((self.min_len_s * f64::from(sample_rate) - 1e-9).ceil() as usize).max(1)
    }
}

/// Splits over-long clips into consecutive max-length chunks and drops clips
/// (or trailing chunks) below the minimum length.
///
/// Clips already within bounds keep their id; chunks are named `<id>#<k>` and
/// inherit speaker, transcription and label.
pub fn preprocess(corpus: &Corpus, limits: LengthLimits) -> Result<Corpus> {
    if !(limits.min_len_s > 0.0 && limits.max_len_s > limits.min_len_s) {
        return Err(Error::param(format!(
            "need max_len_s > min_len_s > 0, got max {} min {}",
            limits.max_len_s, limits.min_len_s
        )));
    }
    let mut out = Vec::with_capacity(corpus.len());
    for clip in corpus.clips() {
        let max = limits.max_samples(clip.sample_rate);
        let min = limits.min_samples(clip.sample_rate);
        let n = clip.num_samples();
        if n <= max {
            if n >= min {
                out.push(clip.clone());
            }
            continue;
        }
        for (k, start) in (0..n).step_by(max).enumerate() {
            let end = (start + max).min(n);
            if end - start >= min {
                out.push(clip.chunk(k, start, end));
            }
        }
    }
    Corpus::new(corpus.name.clone(), out)
}
