//! Batch feature extraction: a directory of WAV files plus a
//! `file,speaker,label` CSV becomes feature files, sidecars and a manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{write_if_changed, DatasetManifest, ManifestRecord};
use crate::audio::{read_wav, write_feature_file, FeatureSidecar, FrontendConfig, LogMelExtractor};
use crate::error::{Error, Result};

pub const LABELS_FILE: &str = "labels.csv";
pub const FEATURE_DIR: &str = "features";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub file: String,
    pub speaker: String,
    pub label: String,
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| Error::Dataset(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, rows: &[LabelRow]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExtractFailure {
    pub file: String,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct ExtractSummary {
    pub manifest: DatasetManifest,
    /// Files created or rewritten by this run.
    pub written: Vec<PathBuf>,
    /// Utterances whose features were already up to date.
    pub skipped: usize,
    pub failures: Vec<ExtractFailure>,
}

fn feature_name(utterance: &str, index: usize) -> String {
    format!("{utterance}_{index}.lgfa")
}

fn is_wav(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn modified(path: &Path) -> Option<std::time::SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// Existing feature files `<utterance>_0.lgfa, _1, …` if the first one is at
/// least as new as the source WAV.
fn up_to_date_features(feature_dir: &Path, utterance: &str, wav: &Path) -> Option<usize> {
    let first = feature_dir.join(feature_name(utterance, 0));
    let (src, out) = (modified(wav)?, modified(&first)?);
    if out < src {
        return None;
    }
    Some(
        (0..)
            .take_while(|&i| feature_dir.join(feature_name(utterance, i)).exists())
            .count(),
    )
}

/// Extracts every labelled WAV under `wav_dir` into `out_dir`.
///
/// Class indices follow `classes` when given, otherwise the sorted set of
/// label names. Per-file problems are collected in the summary rather than
/// aborting the run.
pub fn extract_corpus(
    wav_dir: &Path,
    labels_csv: &Path,
    out_dir: &Path,
    frontend: &FrontendConfig,
    classes: Option<Vec<String>>,
) -> Result<ExtractSummary> {
    let extractor = LogMelExtractor::new(frontend.clone())?;
    let entries = fs::read_dir(wav_dir).map_err(|e| Error::io(wav_dir, e))?;
    let mut wavs = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(wav_dir, e))?;
        let path = entry.path();
        if path.is_file() && is_wav(&path) {
            wavs.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    let rows = if labels_csv.exists() {
        read_labels(labels_csv)?
    } else if wavs.is_empty() {
        Vec::new()
    } else {
        return Err(Error::Dataset(format!("label file {} not found", labels_csv.display())));
    };
    if wavs.is_empty() {
        log::warn!("no WAV files in {}", wav_dir.display());
    }

    let classes = classes.unwrap_or_else(|| {
        rows.iter()
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    });
    let class_index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let feature_dir = out_dir.join(FEATURE_DIR);
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;

    let mut failures = Vec::new();
    let mut labelled = BTreeMap::new();
    for row in &rows {
        if labelled.insert(row.file.clone(), row).is_some() {
            failures.push(ExtractFailure {
                file: row.file.clone(),
                error: "listed more than once in the label file".into(),
            });
        }
    }
    for wav in &wavs {
        if !labelled.contains_key(wav) {
            failures.push(ExtractFailure {
                file: wav.clone(),
                error: "no label entry".into(),
            });
        }
    }

    let mut written = Vec::new();
    let mut skipped = 0;
    let mut records = Vec::new();
    for (file, row) in &labelled {
        let fail = |error: String| ExtractFailure {
            file: file.clone(),
            error,
        };
        if !wavs.contains(file) {
            failures.push(fail("listed in the label file but missing".into()));
            continue;
        }
        let Some(&label) = class_index.get(row.label.as_str()) else {
            failures.push(fail(format!("unknown class `{}`", row.label)));
            continue;
        };
        let wav_path = wav_dir.join(file);
        let utterance = Path::new(file)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| file.clone());

        let count = match up_to_date_features(&feature_dir, &utterance, &wav_path) {
            Some(n) => {
                skipped += 1;
                n
            }
            None => {
                let specs = match read_wav(&wav_path).and_then(|clip| extractor.extract(&clip, &utterance)) {
                    Ok(s) => s,
                    Err(e) => {
                        failures.push(fail(e.to_string()));
                        continue;
                    }
                };
                for (i, spec) in specs.iter().enumerate() {
                    let path = feature_dir.join(feature_name(&utterance, i));
                    write_feature_file(&path, spec)?;
                    written.push(path);
                }
                // Drop leftovers from an older, longer version of the file.
                for i in specs.len().. {
                    let stale = feature_dir.join(feature_name(&utterance, i));
                    if !stale.exists() {
                        break;
                    }
                    fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
                    let _ = fs::remove_file(stale.with_extension("json"));
                }
                specs.len()
            }
        };

        let sidecar = FeatureSidecar {
            source_id: utterance.clone(),
            speaker: row.speaker.clone(),
            label,
        };
        let sidecar_json = serde_json::to_string_pretty(&sidecar)? + "\n";
        let mut feature_paths = Vec::with_capacity(count);
        for i in 0..count {
            let name = feature_name(&utterance, i);
            let sidecar_path = feature_dir.join(&name).with_extension("json");
            if write_if_changed(&sidecar_path, sidecar_json.as_bytes())? {
                written.push(sidecar_path);
            }
            feature_paths.push(Path::new(FEATURE_DIR).join(name));
        }
        records.push(ManifestRecord {
            utterance_id: utterance,
            speaker_id: row.speaker.clone(),
            label,
            feature_paths,
        });
    }
    records.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));

    let manifest = DatasetManifest::new(classes, records, out_dir);
    written.extend(manifest.save()?);
    for f in &failures {
        log::error!("{}: {}", f.file, f.error);
    }
    Ok(ExtractSummary {
        manifest,
        written,
        skipped,
        failures,
    })
}
