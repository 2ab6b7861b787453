use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis along which the spectrogram is cut into frames and segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Frames are time steps (the default model).
    #[serde(rename = "t")]
    TimeOnly,
    /// Frames are Mel bands.
    #[serde(rename = "f")]
    FrequencyOnly,
    /// Both branches, class tokens concatenated before the classifier.
    #[serde(rename = "tf")]
    TimeFrequency,
}

/// Which architecture to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Frame transformer nested in a segment transformer.
    #[serde(rename = "full")]
    Full,
    /// One transformer over single-frame chunks.
    #[serde(rename = "frame")]
    FrameOnly,
    /// One transformer over `k`-frame segment chunks.
    #[serde(rename = "segment")]
    SegmentOnly,
    /// One transformer over square patches.
    #[serde(rename = "vit-square")]
    VitSquare,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::TimeOnly => "t",
            Variant::FrequencyOnly => "f",
            Variant::TimeFrequency => "tf",
        }
    }
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::FrameOnly => "frame",
            Ablation::SegmentOnly => "segment",
            Ablation::VitSquare => "vit-square",
        }
    }

    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::FrameOnly,
        Ablation::SegmentOnly,
        Ablation::VitSquare,
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t" => Ok(Variant::TimeOnly),
            "f" => Ok(Variant::FrequencyOnly),
            "tf" => Ok(Variant::TimeFrequency),
            other => Err(Error::Config(format!("unknown variant `{other}` (t, f, tf)"))),
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation `{s}` (full, frame, segment, vit-square)"
                ))
            })
    }
}

/// Architecture hyperparameters. Defaults: 64×128×1 input, 8-frame
/// segments, 7 blocks per transformer, frame width 16 and segment width 256,
/// 4 heads each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LgfaConfig {
    pub n_mels: usize,
    pub n_frames: usize,
    pub channels: usize,
    pub frames_per_segment: usize,
    /// Bands per segment for the frequency branch.
    pub bands_per_segment: usize,
    pub depth: usize,
    pub frame_dim: usize,
    pub segment_dim: usize,
    pub frame_heads: usize,
    pub segment_heads: usize,
    pub n_classes: usize,
    pub variant: Variant,
    pub ablation: Ablation,
    pub patch_size: usize,
}

impl Default for LgfaConfig {
    fn default() -> Self {
        LgfaConfig {
            n_mels: 64,
            n_frames: 128,
            channels: 1,
            frames_per_segment: 8,
            bands_per_segment: 8,
            depth: 7,
            frame_dim: 16,
            segment_dim: 256,
            frame_heads: 4,
            segment_heads: 4,
            n_classes: 4,
            variant: Variant::TimeOnly,
            ablation: Ablation::Full,
            patch_size: 16,
        }
    }
}

impl LgfaConfig {
    /// The small configuration used for end-to-end gradient checks.
    pub fn gradcheck() -> Self {
        LgfaConfig {
            n_mels: 8,
            n_frames: 8,
            channels: 1,
            frames_per_segment: 2,
            bands_per_segment: 2,
            depth: 1,
            frame_dim: 4,
            segment_dim: 8,
            frame_heads: 2,
            segment_heads: 2,
            n_classes: 3,
            variant: Variant::TimeOnly,
            ablation: Ablation::Full,
            patch_size: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_mels", self.n_mels),
            ("n_frames", self.n_frames),
            ("channels", self.channels),
            ("frames_per_segment", self.frames_per_segment),
            ("bands_per_segment", self.bands_per_segment),
            ("depth", self.depth),
            ("frame_dim", self.frame_dim),
            ("segment_dim", self.segment_dim),
            ("frame_heads", self.frame_heads),
            ("segment_heads", self.segment_heads),
            ("n_classes", self.n_classes),
            ("patch_size", self.patch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.segment_dim % self.segment_heads != 0 {
            return Err(Error::Config(format!(
                "segment_dim {} is not divisible by segment_heads {}",
                self.segment_dim, self.segment_heads
            )));
        }
        match self.ablation {
            Ablation::Full => {
                if self.frame_dim % self.frame_heads != 0 {
                    return Err(Error::Config(format!(
                        "frame_dim {} is not divisible by frame_heads {}",
                        self.frame_dim, self.frame_heads
                    )));
                }
                if self.variant != Variant::FrequencyOnly {
                    self.check_time_segments()?;
                }
                if self.variant != Variant::TimeOnly && self.n_mels % self.bands_per_segment != 0 {
                    return Err(Error::Config(format!(
                        "n_mels {} is not divisible by bands_per_segment {}",
                        self.n_mels, self.bands_per_segment
                    )));
                }
            }
            Ablation::FrameOnly => {}
            Ablation::SegmentOnly => self.check_time_segments()?,
            Ablation::VitSquare => {
                if self.n_mels % self.patch_size != 0 || self.n_frames % self.patch_size != 0 {
                    return Err(Error::Config(format!(
                        "square patches of {p}x{p} need both grid dims divisible by {p}, got {}x{}",
                        self.n_mels,
                        self.n_frames,
                        p = self.patch_size
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_time_segments(&self) -> Result<()> {
        if self.n_frames % self.frames_per_segment != 0 {
            return Err(Error::Config(format!(
                "n_frames {} is not divisible by frames_per_segment {}",
                self.n_frames, self.frames_per_segment
            )));
        }
        Ok(())
    }

    /// Width of the classifier input.
    pub fn classifier_input_width(&self) -> usize {
        match (self.ablation, self.variant) {
            (Ablation::Full, Variant::TimeFrequency) => 2 * self.segment_dim,
            _ => self.segment_dim,
        }
    }
}
