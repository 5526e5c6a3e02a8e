//! Seeded synthetic speech stand-in.
//!
//! Each speaker owns a base frequency, a timbre (amplitudes and phase offsets
//! of the first three harmonics) and a biased symbol alphabet. A clip is a
//! transcription of 10-30 symbols rendered as consecutive segments; every
//! segment mixes the speaker's three harmonics with symbol-dependent amplitude
//! factors and a small symbol-dependent detune. Uniform
//! noise of amplitude 0.05 is added and the result is peak-normalized to 0.9
//! and quantized to the 16-bit grid so WAV persistence is lossless.

use serde::{Deserialize, Serialize};

use super::{Clip, Corpus, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, fnv1a64, SplitMix64};

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const FAVORED_SYMBOLS: usize = 6;
const FAVORED_WEIGHT: f64 = 6.0;
const NOISE_AMPLITUDE: f64 = 0.05;
const PEAK: f64 = 0.9;
const PCM_SCALE: f64 = 32767.0;

/// Everything needed to re-synthesize a clip (or a slice of one) bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOrigin {
    pub seed: u64,
    pub speaker_index: u32,
    pub clip_index: u32,
    pub duration_range_s: (f64, f64),
    /// Sample offset into the full synthesized clip.
    #[serde(default)]
    pub offset: usize,
    /// Sample count; `None` means the whole clip.
    #[serde(default)]
    pub len: Option<usize>,
}

impl SynthOrigin {
    pub(super) fn slice(&self, start: usize, len: usize) -> SynthOrigin {
        SynthOrigin {
            offset: self.offset + start,
            len: Some(len),
            ..*self
        }
    }
}

struct SpeakerProfile {
    f0: f64,
    timbre: [f64; 3],
    /// Phase offsets of the harmonics relative to the fundamental.
    offsets: [f64; 3],
    symbol_weights: [f64; 26],
}

impl SpeakerProfile {
    fn new(seed: u64, speaker: u32) -> Self {
        let mut rng = SplitMix64::derive(seed, &format!("speaker/{speaker}"));
        // Disjoint 30 Hz bands keep base frequencies distinct across speakers.
        let band = f64::from(speaker % 48);
        let f0 = 80.0 + 30.0 * band + rng.uniform(0.0, 20.0);
        let timbre = [
            rng.uniform(0.5, 1.0),
            rng.uniform(0.3, 1.0),
            rng.uniform(0.2, 0.8),
        ];
        let offsets = [
            0.0,
            rng.uniform(0.0, std::f64::consts::TAU),
            rng.uniform(0.0, std::f64::consts::TAU),
        ];
        let mut symbol_weights = [1.0; 26];
        for i in rng.sample_indices(ALPHABET.len(), FAVORED_SYMBOLS) {
            symbol_weights[i] = FAVORED_WEIGHT;
        }
        Self {
            f0,
            timbre,
            offsets,
            symbol_weights,
        }
    }

    fn draw_symbol(&self, rng: &mut SplitMix64) -> u8 {
        let total: f64 = self.symbol_weights.iter().sum();
        let mut u = rng.uniform(0.0, total);
        for (i, w) in self.symbol_weights.iter().enumerate() {
            if u < *w {
                return ALPHABET[i];
            }
            u -= w;
        }
        ALPHABET[ALPHABET.len() - 1]
    }
}

/// Per-symbol amplitude factors for the three harmonics and a relative detune.
fn symbol_shape(symbol: u8) -> ([f64; 3], f64) {
    let mut rng = SplitMix64::new(fnv1a64(&[b's', symbol]));
    let amps = [
        rng.uniform(0.6, 1.0),
        rng.uniform(0.6, 1.0),
        rng.uniform(0.6, 1.0),
    ];
    (amps, rng.uniform(-0.04, 0.04))
}

fn validate_range((lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi <= 60.0) {
        return Err(Error::param(format!(
            "duration range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 60"
        )));
    }
    Ok(())
}

fn speaker_id(speaker: u32) -> String {
    format!("spk{speaker:03}")
}

fn clip_id(speaker: u32, clip: u32) -> String {
    format!("spk{speaker:03}-utt{clip:03}")
}

/// Renders the clip described by `origin`, applying its offset/len slice.
pub fn synthesize_clip(origin: &SynthOrigin) -> Result<Clip> {
    validate_range(origin.duration_range_s)?;
    let profile = SpeakerProfile::new(origin.seed, origin.speaker_index);
    let mut rng = SplitMix64::new(derive_seed(
        origin.seed,
        &format!("clip/{}/{}", origin.speaker_index, origin.clip_index),
    ));

    let (lo, hi) = origin.duration_range_s;
    let seconds = if lo == hi { lo } else { rng.uniform(lo, hi) };
    let n = ((seconds * f64::from(SAMPLE_RATE)).round() as usize).max(1);

    let n_symbols = 10 + rng.below(21);
    let text: Vec<u8> = (0..n_symbols).map(|_| profile.draw_symbol(&mut rng)).collect();

    let mut phase = rng.uniform(0.0, std::f64::consts::TAU);
    let shapes: Vec<_> = text.iter().map(|&s| symbol_shape(s)).collect();
    let dt = 1.0 / f64::from(SAMPLE_RATE);
    let mut signal = Vec::with_capacity(n);
    for i in 0..n {
        let (amps, detune) = shapes[(i * n_symbols / n).min(n_symbols - 1)];
        let mut x = 0.0;
        for k in 0..3 {
            let harmonic = (k + 1) as f64;
            x += profile.timbre[k] * amps[k] * (harmonic * phase + profile.offsets[k]).sin();
        }
        phase = (phase + std::f64::consts::TAU * profile.f0 * (1.0 + detune) * dt) % std::f64::consts::TAU;
        x += rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE);
        signal.push(x);
    }
    let peak = signal.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gain = if peak > 0.0 { PEAK / peak } else { 0.0 };
    let samples: Vec<f32> = signal
        .iter()
        .map(|x| ((x * gain * PCM_SCALE).round() / PCM_SCALE) as f32)
        .collect();

    let end = match origin.len {
        Some(len) => origin.offset + len,
        None => n,
    };
    if origin.offset >= end || end > n {
        return Err(Error::Integrity(format!(
            "synthesis slice {}..{end} outside clip of {n} samples",
            origin.offset
        )));
    }

    let base_id = clip_id(origin.speaker_index, origin.clip_index);
    let mut clip = Clip::new(base_id, samples[origin.offset..end].to_vec(), SAMPLE_RATE)?
        .with_speaker(speaker_id(origin.speaker_index))
        .with_transcription(String::from_utf8(text).expect("ascii alphabet"))
        .with_label(origin.speaker_index);
    clip.origin = Some(*origin);
    Ok(clip)
}

/// Deterministic synthetic corpus: `num_speakers × clips_per_speaker` clips,
/// ordered speaker-major.
pub fn generate_corpus(
    num_speakers: u32,
    clips_per_speaker: u32,
    duration_range_s: (f64, f64),
    seed: u64,
) -> Result<Corpus> {
    if num_speakers == 0 || clips_per_speaker == 0 {
        return Err(Error::param(
            "need at least one speaker and one clip per speaker",
        ));
    }
    validate_range(duration_range_s)?;
    let mut clips = Vec::with_capacity((num_speakers * clips_per_speaker) as usize);
    for speaker_index in 0..num_speakers {
        for clip_index in 0..clips_per_speaker {
            clips.push(synthesize_clip(&SynthOrigin {
                seed,
                speaker_index,
                clip_index,
                duration_range_s,
                offset: 0,
                len: None,
            })?);
        }
    }
    Corpus::new(format!("synth-{seed}"), clips)
}
