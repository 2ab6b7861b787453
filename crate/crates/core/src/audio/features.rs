use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{resample, AudioClip, MelFilterbank, Spectrogram, Stft};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"LGFA";

/// Log-Mel recipe: 16 kHz, 20 ms Hamming window, 50 % overlap, 64 HTK Mel
/// bands, 128-frame samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub frames_per_sample: usize,
    pub log_eps: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            window_len: 320,
            hop: 160,
            fft_size: 512,
            n_mels: 64,
            fmin: 0.0,
            fmax: 8000.0,
            frames_per_sample: 128,
            log_eps: 1e-6,
        }
    }
}

#[derive(Debug)]
pub struct LogMelExtractor {
    config: FrontendConfig,
    stft: Stft,
    bank: MelFilterbank,
}

impl LogMelExtractor {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        if config.frames_per_sample == 0 || config.log_eps <= 0.0 {
            return Err(Error::Config(
                "frames_per_sample and log_eps must be positive".into(),
            ));
        }
        let stft = Stft::new(config.window_len, config.hop, config.fft_size)?;
        let bank = MelFilterbank::new(
            config.n_mels,
            stft.n_bins(),
            config.sample_rate as f64,
            config.fmin,
            config.fmax,
        )?;
        Ok(LogMelExtractor { config, stft, bank })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn pad_value(&self) -> f32 {
        self.config.log_eps.ln() as f32
    }

    /// Mel power per frame, `n_frames × n_mels`, before the log.
    pub fn mel_power(&self, clip: &AudioClip) -> Result<Vec<Vec<f64>>> {
        let clip = resample(clip, self.config.sample_rate)?;
        Ok(self
            .stft
            .power_frames(&clip.samples)
            .iter()
            .map(|p| self.bank.apply(p))
            .collect())
    }

    /// Splits the log-Mel spectrogram of `clip` into consecutive
    /// `frames_per_sample`-frame samples; the last one is padded with
    /// `ln(log_eps)`.
    pub fn extract(&self, clip: &AudioClip, source_id: &str) -> Result<Vec<Spectrogram>> {
        let frames = self.mel_power(clip)?;
        let n_mels = self.config.n_mels;
        let per = self.config.frames_per_sample;
        let hop_s = self.config.hop as f64 / self.config.sample_rate as f64;
        let pad = self.pad_value();
        let count = frames.len().div_ceil(per);
        (0..count)
            .map(|s| {
                let mut values = vec![pad; n_mels * per];
                for t in 0..per {
                    let Some(frame) = frames.get(s * per + t) else {
                        break;
                    };
                    for (m, &e) in frame.iter().enumerate() {
                        values[m * per + t] = (e + self.config.log_eps).ln() as f32;
                    }
                }
                Spectrogram::new(values, n_mels, per, 1, source_id, hop_s)
            })
            .collect()
    }
}

/// JSON companion of a feature file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub source_id: String,
    pub speaker: String,
    pub label: usize,
}

/// Layout: `"LGFA"`, `u32 F`, `u32 T`, `u32 C` (little-endian), then
/// `F·T·C` little-endian `f32` values in `(F, T, C)` row-major order.
pub fn write_feature_file(path: impl AsRef<Path>, spec: &Spectrogram) -> Result<()> {
    let path = path.as_ref();
    let (f, t, c) = spec.shape();
    let mut bytes = Vec::with_capacity(16 + 4 * spec.values().len());
    bytes.extend_from_slice(FEATURE_MAGIC);
    for dim in [f, t, c] {
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in spec.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(
    path: impl AsRef<Path>,
    source_id: &str,
    frame_hop_seconds: f64,
) -> Result<Spectrogram> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: String| Error::Feature {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 16 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("missing LGFA magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (f, t, c) = (dim(0), dim(1), dim(2));
    let n = f
        .checked_mul(t)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| bad("header dimensions overflow".into()))?;
    if bytes.len() != 16 + 4 * n {
        return Err(bad(format!(
            "payload is {} bytes, header {f}x{t}x{c} needs {}",
            bytes.len() - 16,
            4 * n
        )));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Spectrogram::new(values, f, t, c, source_id, frame_hop_seconds).map_err(|e| bad(e.to_string()))
}

pub fn write_sidecar(path: impl AsRef<Path>, sidecar: &FeatureSidecar) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(sidecar)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<FeatureSidecar> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, amp: f64) -> AudioClip {
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
            .collect();
        AudioClip::new(s, 16_000).unwrap()
    }

    #[test]
    fn one_second_gives_single_padded_sample() {
        let ex = LogMelExtractor::new(FrontendConfig::default()).unwrap();
        let specs = ex.extract(&sine(440.0, 16_000, 0.5), "u").unwrap();
        assert_eq!(specs.len(), 1);
        let spec = &specs[0];
        assert_eq!(spec.shape(), (64, 128, 1));
        let pad = ex.pad_value();
        for m in 0..64 {
            for t in 99..128 {
                assert_eq!(spec.get(m, t, 0), pad);
            }
        }
        assert!((0..64).any(|m| spec.get(m, 0, 0) != pad));
    }

    #[test]
    fn long_clip_splits_into_three_samples() {
        let ex = LogMelExtractor::new(FrontendConfig::default()).unwrap();
        let n = (16_000.0 * 2.6) as usize;
        assert_eq!(super::super::n_frames(n, 320, 160), 259);
        let specs = ex.extract(&sine(300.0, n, 0.3), "u").unwrap();
        assert_eq!(specs.len(), 3);
        assert!(specs.iter().all(|s| s.shape() == (64, 128, 1)));
    }

    #[test]
    fn silence_is_log_eps_everywhere() {
        let ex = LogMelExtractor::new(FrontendConfig::default()).unwrap();
        let clip = AudioClip::new(vec![0.0; 8000], 16_000).unwrap();
        let specs = ex.extract(&clip, "s").unwrap();
        let pad = (1e-6f64).ln() as f32;
        assert!(specs[0].values().iter().all(|&v| v == pad));
    }

    #[test]
    fn mel_power_scales_quadratically() {
        let ex = LogMelExtractor::new(FrontendConfig::default()).unwrap();
        let base = sine(1234.0, 9000, 0.2);
        let scaled = AudioClip::new(base.samples.iter().map(|s| s * 3.0).collect(), 16_000).unwrap();
        let total = |c: &AudioClip| -> f64 { ex.mel_power(c).unwrap().iter().flatten().sum() };
        let ratio = total(&scaled) / total(&base);
        assert!((ratio / 9.0 - 1.0).abs() < 1e-5, "ratio {ratio}");
    }

    #[test]
    fn resamples_before_analysis() {
        let ex = LogMelExtractor::new(FrontendConfig::default()).unwrap();
        let clip = AudioClip::new(vec![0.1; 8000], 8000).unwrap();
        let frames = ex.mel_power(&clip).unwrap();
        assert_eq!(frames.len(), 99);
    }

    #[test]
    fn feature_file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.lgfa");
        let values: Vec<f32> = (0..24).map(|i| i as f32 * 0.5 - 3.0).collect();
        let spec = Spectrogram::new(values, 4, 3, 2, "utt", 0.01).unwrap();
        write_feature_file(&path, &spec).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LGFA");
        assert_eq!(&bytes[4..16], &[4, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 24 * 4);
        let back = read_feature_file(&path, "utt", 0.01).unwrap();
        assert_eq!(back, spec);

        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(
            read_feature_file(&path, "utt", 0.01).unwrap_err(),
            Error::Feature { .. }
        ));
    }
}
