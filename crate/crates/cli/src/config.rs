//! The merged run configuration: an optional JSON file, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use lgfa::audio::FrontendConfig;
use lgfa::model::{Ablation, LgfaConfig, Variant};
use lgfa::train::{SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: LgfaConfig,
    pub train: TrainConfig,
    pub frontend: FrontendConfig,
    pub synth: SynthConfig,
    /// Seed for initialisation, shuffling and synthesis.
    pub seed: u64,
    /// Dataset directory holding `manifest.jsonl` and `classes.json`.
    pub data: Option<PathBuf>,
    /// Root under which timestamped run directories are created.
    pub out: Option<PathBuf>,
    pub parallel_folds: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Ok(RunConfig {
                parallel_folds: 1,
                ..Default::default()
            });
        };
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
        if cfg.parallel_folds == 0 {
            cfg.parallel_folds = 1;
        }
        Ok(cfg)
    }

    /// Applies the shared command-line overrides.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if let Some(a) = o.ablation {
            self.model.ablation = a;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(n) = o.parallel_folds {
            self.parallel_folds = n;
        }
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |e: lgfa::Error| ConfigError(e.to_string());
        self.model.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.synth.validate().map_err(wrap)?;
        lgfa::audio::LogMelExtractor::new(self.frontend.clone()).map_err(wrap)?;
        if self.parallel_folds == 0 {
            return Err(ConfigError("parallel_folds must be at least 1".into()));
        }
        Ok(())
    }

    pub fn out_root(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub ablation: Option<Ablation>,
    pub out: Option<PathBuf>,
    pub parallel_folds: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 3, "model": {"variant": "f", "depth": 2}}"#).unwrap();
        let mut cfg = RunConfig::load(Some(&path)).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            variant: Some(Variant::TimeFrequency),
            ..Default::default()
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.model.variant, Variant::TimeFrequency);
        assert_eq!(cfg.model.depth, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"model": {"depht": 2}}"#).unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
        fs::write(&path, r#"{"unknown": 1}"#).unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
    }
}
