use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_feature_file, Spectrogram};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CLASSES_FILE: &str = "classes.json";

/// One utterance. Feature paths are relative to the manifest directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub label: usize,
    pub feature_paths: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub records: Vec<ManifestRecord>,
    /// Directory the feature paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(classes: Vec<String>, records: Vec<ManifestRecord>, root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            classes,
            records,
            root: root.into(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Distinct speakers in sorted order.
    pub fn speakers(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.speaker_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn feature_path(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    /// Reads `manifest.jsonl` and `classes.json` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let classes_path = dir.join(CLASSES_FILE);
        let classes_text = fs::read_to_string(&classes_path).map_err(|e| Error::io(&classes_path, e))?;
        let classes: Vec<String> = serde_json::from_str(&classes_text)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut records = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                Error::Dataset(format!("{}:{}: {e}", manifest_path.display(), line_no + 1))
            })?;
            records.push(record);
        }
        Ok(DatasetManifest::new(classes, records, dir))
    }

    /// Serialises both files; returns the manifest text and class table text.
    pub fn render(&self) -> Result<(String, String)> {
        let mut manifest = String::new();
        for r in &self.records {
            manifest.push_str(&serde_json::to_string(r)?);
            manifest.push('\n');
        }
        let classes = serde_json::to_string_pretty(&self.classes)? + "\n";
        Ok((manifest, classes))
    }

    /// Writes both files into `root`, leaving files whose content is
    /// unchanged untouched. Returns the paths actually written.
    pub fn save(&self) -> Result<Vec<PathBuf>> {
        let (manifest, classes) = self.render()?;
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let mut written = Vec::new();
        for (name, content) in [(MANIFEST_FILE, manifest), (CLASSES_FILE, classes)] {
            let path = self.root.join(name);
            if write_if_changed(&path, content.as_bytes())? {
                written.push(path);
            }
        }
        Ok(written)
    }

    /// Structural checks that need no feature I/O.
    pub fn validate_records(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Dataset("class table is empty".into()));
        }
        if self.speakers().len() < 2 {
            return Err(Error::Dataset(format!(
                "need at least two speakers, found {}",
                self.speakers().len()
            )));
        }
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if r.label >= self.n_classes() {
                return Err(Error::Dataset(format!(
                    "{}: label {} outside {} classes",
                    r.utterance_id,
                    r.label,
                    self.n_classes()
                )));
            }
            if r.feature_paths.is_empty() {
                return Err(Error::Dataset(format!("{}: no feature files", r.utterance_id)));
            }
            if !ids.insert(&r.utterance_id) {
                return Err(Error::Dataset(format!("duplicate utterance id {}", r.utterance_id)));
            }
        }
        Ok(())
    }
}

pub(crate) fn write_if_changed(path: &Path, content: &[u8]) -> Result<bool> {
    if fs::read(path).is_ok_and(|old| old == content) {
        return Ok(false);
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))?;
    Ok(true)
}

/// One leave-one-speaker-out fold; indices refer to manifest records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub test_speaker: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per speaker, in sorted speaker order. Utterances are never
/// split, so all samples of an utterance stay on one side.
pub fn loso_split(manifest: &DatasetManifest) -> Result<Vec<Fold>> {
    let speakers = manifest.speakers();
    if speakers.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-speaker-out needs at least two speakers, found {}",
            speakers.len()
        )));
    }
    Ok(speakers
        .into_iter()
        .map(|speaker| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..manifest.records.len()).partition(|&i| manifest.records[i].speaker_id == speaker);
            Fold {
                test_speaker: speaker,
                train,
                test,
            }
        })
        .collect())
}

/// Feature samples of every manifest record, loaded once.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    /// `samples[i]` holds the spectrograms of record `i`.
    pub samples: Vec<Vec<Spectrogram>>,
}

impl LoadedDataset {
    /// Loads and checks every feature file against `shape` (F, T, C).
    /// With `standardize`, each sample is shifted and scaled to zero mean
    /// and unit variance.
    pub fn load(manifest: DatasetManifest, shape: (usize, usize, usize), standardize: bool) -> Result<Self> {
        manifest.validate_records()?;
        let mut samples = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            let mut specs = Vec::with_capacity(r.feature_paths.len());
            for rel in &r.feature_paths {
                let path = manifest.feature_path(rel);
                if !path.exists() {
                    return Err(Error::Dataset(format!(
                        "{}: feature file {} is missing",
                        r.utterance_id,
                        path.display()
                    )));
                }
                let spec = read_feature_file(&path, &r.utterance_id, 0.01)?;
                if spec.shape() != shape {
                    return Err(Error::Dataset(format!(
                        "{}: feature shape {:?} does not match configured {shape:?}",
                        path.display(),
                        spec.shape()
                    )));
                }
                specs.push(if standardize { spec.standardized() } else { spec });
            }
            samples.push(specs);
        }
        Ok(LoadedDataset { manifest, samples })
    }

    pub fn label(&self, record: usize) -> usize {
        self.manifest.records[record].label
    }
}
