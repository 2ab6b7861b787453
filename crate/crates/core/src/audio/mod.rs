//! Audio front-end: WAV decoding, resampling, Hamming-windowed STFT, the Mel
//! filterbank, and fixed-size log-Mel spectrogram samples.

mod features;
mod mel;
mod stft;
mod wav;

pub use features::{
    read_feature_file, read_sidecar, write_feature_file, write_sidecar, FeatureSidecar,
    FrontendConfig, LogMelExtractor, FEATURE_MAGIC,
};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use stft::{hamming_window, n_frames, Stft};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Audio("audio clip is empty".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Linear-interpolation resampling. Equal rates pass the clip through unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Audio("target sample rate must be positive".into()));
    }
    if clip.samples.is_empty() {
        return Err(Error::Audio("cannot resample an empty clip".into()));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let n_in = clip.samples.len();
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let n_out = ((n_in as f64 / ratio).round() as usize).max(1);
    let last = n_in - 1;
    let samples = (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let idx = pos.floor() as usize;
            if idx >= last {
                return clip.samples[last];
            }
            let frac = pos - idx as f64;
            clip.samples[idx] * (1.0 - frac) + clip.samples[idx + 1] * frac
        })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: target_rate,
    })
}

/// One log-Mel sample of shape `(n_mels, n_frames, channels)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    values: Vec<f32>,
    n_mels: usize,
    n_frames: usize,
    channels: usize,
    pub source_id: String,
    pub frame_hop_seconds: f64,
}

impl Spectrogram {
    pub fn new(
        values: Vec<f32>,
        n_mels: usize,
        n_frames: usize,
        channels: usize,
        source_id: impl Into<String>,
        frame_hop_seconds: f64,
    ) -> Result<Self> {
        if n_mels == 0 || n_frames == 0 || channels == 0 {
            return Err(Error::shape(
                "spectrogram",
                format!("dimensions must be positive: {n_mels}x{n_frames}x{channels}"),
            ));
        }
        if values.len() != n_mels * n_frames * channels {
            return Err(Error::shape(
                "spectrogram",
                format!(
                    "{} values for shape {n_mels}x{n_frames}x{channels}",
                    values.len()
                ),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("spectrogram", "non-finite feature value"));
        }
        Ok(Spectrogram {
            values,
            n_mels,
            n_frames,
            channels,
            source_id: source_id.into(),
            frame_hop_seconds,
        })
    }

    /// `(F, T, C)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_mels, self.n_frames, self.channels)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, mel: usize, frame: usize, channel: usize) -> f32 {
        self.values[(mel * self.n_frames + frame) * self.channels + channel]
    }

    /// `T × (F·C)` matrix whose row `t` is the frame at time `t`.
    pub fn time_frames(&self) -> Vec<f64> {
        let (f_dim, t_dim, c_dim) = self.shape();
        let mut out = Vec::with_capacity(self.values.len());
        for t in 0..t_dim {
            for f in 0..f_dim {
                for c in 0..c_dim {
                    out.push(self.get(f, t, c) as f64);
                }
            }
        }
        out
    }

    /// `F × (T·C)` matrix whose row `f` is the whole band `f`.
    pub fn band_frames(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// Swaps the Mel and time axes.
    pub fn transposed(&self) -> Spectrogram {
        let (f_dim, t_dim, c_dim) = self.shape();
        let mut values = Vec::with_capacity(self.values.len());
        for t in 0..t_dim {
            for f in 0..f_dim {
                for c in 0..c_dim {
                    values.push(self.get(f, t, c));
                }
            }
        }
        Spectrogram {
            values,
            n_mels: t_dim,
            n_frames: f_dim,
            channels: c_dim,
            source_id: self.source_id.clone(),
            frame_hop_seconds: self.frame_hop_seconds,
        }
    }

    /// Zero-mean, unit-variance copy (computed over every cell).
    pub fn standardized(&self) -> Spectrogram {
        let n = self.values.len() as f64;
        let mean = self.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self
            .values
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt().max(1e-8);
        Spectrogram {
            values: self
                .values
                .iter()
                .map(|&v| ((v as f64 - mean) / std) as f32)
                .collect(),
            ..self.clone()
        }
    }
}
