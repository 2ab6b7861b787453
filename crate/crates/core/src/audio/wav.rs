use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

const PCM16_SCALE: f64 = 32768.0;

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Audio(format!("{}: {e}", path.display())),
        hound::Error::FormatError(msg) => Error::Decode {
            field: "header",
            detail: format!("{}: {msg}", path.display()),
        },
        hound::Error::TooWide => Error::Decode {
            field: "bits_per_sample",
            detail: format!("{}: sample too wide", path.display()),
        },
        hound::Error::UnfinishedSample => Error::Decode {
            field: "data",
            detail: format!("{}: truncated sample", path.display()),
        },
        hound::Error::Unsupported => Error::Decode {
            field: "format",
            detail: format!("{}: unsupported codec", path.display()),
        },
        hound::Error::InvalidSampleFormat => Error::Decode {
            field: "sample_format",
            detail: format!("{}: invalid sample format", path.display()),
        },
    }
}

/// Decodes a 16-bit PCM WAV file; multi-channel audio is averaged to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Decode {
            field: "sample_format",
            detail: format!("{}: only integer PCM is supported", path.display()),
        });
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::Decode {
            field: "bits_per_sample",
            detail: format!(
                "{}: expected 16-bit samples, found {}",
                path.display(),
                spec.bits_per_sample
            ),
        });
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Decode {
            field: "channels",
            detail: format!("{}: zero channels", path.display()),
        });
    }
    let raw = reader
        .samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_hound(path, e))?;
    let samples: Vec<f64> = raw
        .chunks(channels)
        .map(|frame| frame.iter().map(|&s| s as f64 / PCM16_SCALE).sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))
}

/// Writes a mono 16-bit PCM WAV file. Samples outside `[-1, 1)` are clipped.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        writer
            .write_sample(quantize(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

fn quantize(s: f64) -> i16 {
    (s * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}
