//! Seeded synthetic emotion corpus.
//!
//! Class `c` is a train of band-limited tone bursts with its own burst rate
//! and centre frequency, one octave above class `c - 1`. Each speaker
//! transposes every burst by a fixed pitch offset and applies a fixed gain.
//!
//! Speaker offsets span `±A` octaves in `n` even steps. When the outermost
//! speaker is held out, its spectrum lies `2A/(n-1)` octaves beyond the
//! training speakers' range for its own class and `1 - 2A` from the
//! neighbouring class, so the spectral cue stays informative only while
//! `2A/(n-1) < 1 - 2A`: `A < 3/8` for four speakers. `A = 0.25` keeps a
//! clear margin for three or more speakers.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{loso_split, DatasetManifest, LoadedDataset};
use super::extract::{extract_corpus, write_labels, ExtractSummary, LabelRow, LABELS_FILE};
use crate::audio::{write_wav, AudioClip, FrontendConfig};
use crate::error::{Error, Result};

pub const WAV_DIR: &str = "wav";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub n_classes: usize,
    /// Utterances per class per speaker.
    pub per_speaker: usize,
    pub seed: u64,
    pub duration_seconds: f64,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_speakers: 4,
            n_classes: 4,
            per_speaker: 25,
            seed: 0,
            duration_seconds: 1.25,
            sample_rate: 16_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::Config(format!("need at least 2 speakers, got {}", self.n_speakers)));
        }
        if self.n_classes < 2 || self.per_speaker == 0 {
            return Err(Error::Config("need at least 2 classes and 1 utterance per class".into()));
        }
        if !(self.duration_seconds > 0.05 && self.duration_seconds <= 60.0) {
            return Err(Error::Config(format!("duration {} s out of range", self.duration_seconds)));
        }
        if self.sample_rate < 8_000 {
            return Err(Error::Config(format!("sample rate {} too low", self.sample_rate)));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes).map(|c| format!("class{c}")).collect()
    }

    /// Centre frequency (Hz) of class `c`: one octave apart, compressed if
    /// needed to stay below 5 kHz.
    pub fn class_frequency(&self, c: usize) -> f64 {
        let span = (5000.0f64 / 400.0).log2();
        let step = (span / (self.n_classes - 1) as f64).min(1.0);
        400.0 * 2f64.powf(c as f64 * step)
    }

    /// Bursts per second of class `c`.
    pub fn class_rate(&self, c: usize) -> f64 {
        3.0 + 2.0 * c as f64
    }

    /// Pitch offset of speaker `s` in octaves, spread over ±0.25.
    pub fn speaker_octaves(&self, s: usize) -> f64 {
        SPEAKER_OCTAVES * (2.0 * s as f64 / (self.n_speakers - 1) as f64 - 1.0)
    }

    /// Gain of speaker `s`, spread over ±6 dB.
    pub fn speaker_gain(&self, s: usize) -> f64 {
        let db = 6.0 * (2.0 * s as f64 / (self.n_speakers - 1) as f64 - 1.0);
        10f64.powf(db / 20.0)
    }

    pub fn speaker_name(s: usize) -> String {
        format!("spk{s:02}")
    }
}

const SPEAKER_OCTAVES: f64 = 0.25;
const BURST_SECONDS: f64 = 0.05;
const PARTIAL_AMPLITUDE: f64 = 0.1;
const NOISE_AMPLITUDE: f64 = 0.005;

/// One utterance of class `c` by speaker `s`.
pub fn synth_utterance(cfg: &SynthConfig, c: usize, s: usize, rng: &mut ChaCha8Rng) -> AudioClip {
    let sr = cfg.sample_rate as f64;
    let n = (cfg.duration_seconds * sr).round() as usize;
    let gain = cfg.speaker_gain(s);
    let centre = cfg.class_frequency(c) * 2f64.powf(cfg.speaker_octaves(s)) * rng.gen_range(0.96..1.04);
    let period = 1.0 / cfg.class_rate(c);
    let partials: Vec<(f64, f64)> = [0.95, 1.0, 1.05]
        .iter()
        .map(|r| (centre * r, rng.gen_range(0.0..2.0 * PI)))
        .collect();

    let mut samples: Vec<f64> = (0..n).map(|_| NOISE_AMPLITUDE * rng.gen_range(-1.0..1.0)).collect();
    let burst_len = (BURST_SECONDS * sr) as usize;
    let mut onset = rng.gen_range(0.0..period);
    while onset < cfg.duration_seconds {
        let start = (onset * sr) as usize;
        for k in 0..burst_len.min(n.saturating_sub(start)) {
            let env = 0.5 - 0.5 * (2.0 * PI * k as f64 / (burst_len - 1) as f64).cos();
            let t = (start + k) as f64 / sr;
            let tone: f64 = partials.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum();
            samples[start + k] += gain * PARTIAL_AMPLITUDE * env * tone;
        }
        onset += period * rng.gen_range(0.85..1.15);
    }
    AudioClip {
        samples,
        sample_rate: cfg.sample_rate,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfTest {
    /// Leave-one-speaker-out accuracy of a nearest-centroid classifier on
    /// time-averaged log-Mel vectors.
    pub centroid_accuracy: f64,
    pub chance: f64,
    /// Smallest distance between two class centroids over the full corpus.
    pub min_centroid_distance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct SynthSummary {
    pub wav_files: Vec<PathBuf>,
    pub extract: ExtractSummary,
    pub self_test: SelfTest,
}

/// Writes `out/wav/*.wav` and `out/wav/labels.csv`, extracts features into
/// `out`, and runs the separability self-test.
pub fn synth_dataset(cfg: &SynthConfig, frontend: &FrontendConfig, out: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    let wav_dir = out.join(WAV_DIR);
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names = cfg.class_names();
    let mut rows = Vec::new();
    let mut wav_files = Vec::new();
    for s in 0..cfg.n_speakers {
        for c in 0..cfg.n_classes {
            for u in 0..cfg.per_speaker {
                let clip = synth_utterance(cfg, c, s, &mut rng);
                let file = format!("{}_c{c}_{u:03}.wav", SynthConfig::speaker_name(s));
                let path = wav_dir.join(&file);
                write_wav(&path, &clip)?;
                wav_files.push(path);
                rows.push(LabelRow {
                    file,
                    speaker: SynthConfig::speaker_name(s),
                    label: names[c].clone(),
                });
            }
        }
    }
    let labels = wav_dir.join(LABELS_FILE);
    write_labels(&labels, &rows)?;
    let extract = extract_corpus(&wav_dir, &labels, out, frontend, Some(names))?;
    if let Some(f) = extract.failures.first() {
        return Err(Error::Dataset(format!("synthetic file {} failed: {}", f.file, f.error)));
    }
    let shape = (frontend.n_mels, frontend.frames_per_sample, 1);
    let data = LoadedDataset::load(extract.manifest.clone(), shape, false)?;
    let self_test = centroid_self_test(&data)?;
    if !self_test.passed {
        return Err(Error::Dataset(format!(
            "generated corpus failed the separability self-test: {self_test:?}"
        )));
    }
    Ok(SynthSummary {
        wav_files,
        extract,
        self_test,
    })
}

fn mean_band_energies(data: &LoadedDataset, record: usize) -> Vec<f64> {
    let specs = &data.samples[record];
    let (f, t, c) = specs[0].shape();
    let mut acc = vec![0.0; f];
    for spec in specs {
        for (band, slot) in acc.iter_mut().enumerate() {
            for frame in 0..t {
                for ch in 0..c {
                    *slot += spec.get(band, frame, ch) as f64;
                }
            }
        }
    }
    let n = (specs.len() * t * c) as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    acc
}

fn centroids(vectors: &[Vec<f64>], labels: &[usize], members: &[usize], n_classes: usize) -> Vec<Option<Vec<f64>>> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for &i in members {
        counts[labels[i]] += 1;
        for (s, v) in sums[labels[i]].iter_mut().zip(&vectors[i]) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Nearest-centroid classifier evaluated leave-one-speaker-out.
pub fn centroid_self_test(data: &LoadedDataset) -> Result<SelfTest> {
    let manifest: &DatasetManifest = &data.manifest;
    let n_classes = manifest.n_classes();
    let vectors: Vec<Vec<f64>> = (0..manifest.records.len()).map(|i| mean_band_energies(data, i)).collect();
    let labels: Vec<usize> = (0..manifest.records.len()).map(|i| data.label(i)).collect();
    let mut correct = 0usize;
    let mut total = 0usize;
    for fold in loso_split(manifest)? {
        let cents = centroids(&vectors, &labels, &fold.train, n_classes);
        for &i in &fold.test {
            let predicted = cents
                .iter()
                .enumerate()
                .filter_map(|(c, cent)| cent.as_ref().map(|v| (c, distance(v, &vectors[i]))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c);
            correct += usize::from(predicted == Some(labels[i]));
            total += 1;
        }
    }
    let all: Vec<usize> = (0..vectors.len()).collect();
    let full: Vec<Vec<f64>> = centroids(&vectors, &labels, &all, n_classes).into_iter().flatten().collect();
    let mut min_centroid_distance = f64::INFINITY;
    for a in 0..full.len() {
        for b in a + 1..full.len() {
            min_centroid_distance = min_centroid_distance.min(distance(&full[a], &full[b]));
        }
    }
    let centroid_accuracy = correct as f64 / total.max(1) as f64;
    let chance = 1.0 / n_classes as f64;
    Ok(SelfTest {
        centroid_accuracy,
        chance,
        min_centroid_distance,
        passed: centroid_accuracy > chance && min_centroid_distance > 0.0 && full.len() == n_classes,
    })
}
