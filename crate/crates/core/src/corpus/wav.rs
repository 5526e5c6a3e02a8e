//! 16-bit PCM mono WAV persistence.
//!
//! Samples map to PCM as `round(x * 32767)`, so any value already on that grid
//! survives a write/read cycle exactly.

use std::path::Path;

use crate::error::{Error, Result};

const PCM_SCALE: f32 = 32767.0;

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * PCM_SCALE).round() as i16;
        writer.write_sample(q).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

/// Reads a mono 16-bit WAV, returning samples and sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::input(format!(
            "{}: expected 16-bit PCM mono, got {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| (f32::from(v) / PCM_SCALE).max(-1.0)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    Ok((samples, spec.sample_rate))
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::input(format!("{}: {other}", path.display())),
    }
}
