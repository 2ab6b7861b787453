use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, ConfusionMatrix};
use super::trainer::{EpochLog, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{LgfaConfig, ModelSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub test_speaker: String,
    pub n_train_utterances: usize,
    pub n_test_utterances: usize,
    pub n_train_samples: usize,
    pub confusion: ConfusionMatrix,
    pub war: f64,
    pub uar: f64,
    pub absent_classes: Vec<usize>,
    pub epochs: Vec<EpochLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledMetrics {
    pub confusion: ConfusionMatrix,
    pub war: f64,
    pub uar: f64,
    pub absent_classes: Vec<usize>,
}

/// Results of a leave-one-speaker-out run. Contains no timestamps or paths,
/// so identical runs serialise to identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelSummary,
    pub model_config: LgfaConfig,
    /// Absent when the report comes from evaluating existing checkpoints.
    pub train_config: Option<TrainConfig>,
    pub classes: Vec<String>,
    pub folds: Vec<FoldReport>,
    /// Metrics of the summed fold confusion matrices.
    pub pooled: PooledMetrics,
    /// Unweighted means of the per-fold values.
    pub fold_mean_war: f64,
    pub fold_mean_uar: f64,
}

impl EvalReport {
    pub fn new(
        model: ModelSummary,
        model_config: LgfaConfig,
        train_config: Option<TrainConfig>,
        classes: Vec<String>,
        folds: Vec<FoldReport>,
    ) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Metrics("no folds to report".into()));
        }
        let mut pooled = ConfusionMatrix::new(classes.len());
        for f in &folds {
            pooled.merge(&f.confusion)?;
        }
        let m = compute_metrics(&pooled)?;
        let n = folds.len() as f64;
        Ok(EvalReport {
            fold_mean_war: folds.iter().map(|f| f.war).sum::<f64>() / n,
            fold_mean_uar: folds.iter().map(|f| f.uar).sum::<f64>() / n,
            model,
            model_config,
            train_config,
            classes,
            folds,
            pooled: PooledMetrics {
                confusion: pooled,
                war: m.war,
                uar: m.uar,
                absent_classes: m.absent_classes,
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text summary: one line per fold, the pooled line, and the
    /// pooled confusion matrix.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model: variant {} ablation {} tokens {:?} classifier width {} params {}",
            self.model.variant,
            self.model.ablation,
            self.model.token_counts,
            self.model.classifier_input_width,
            self.model.n_params
        );
        let _ = writeln!(s, "{:<16} {:>6} {:>8} {:>8}", "fold", "test", "WAR", "UAR");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{:<16} {:>6} {:>8.4} {:>8.4}",
                f.test_speaker, f.n_test_utterances, f.war, f.uar
            );
        }
        let total = self.pooled.confusion.total();
        let _ = writeln!(s, "{:<16} {:>6} {:>8.4} {:>8.4}", "pooled", total, self.pooled.war, self.pooled.uar);
        let _ = writeln!(s, "{:<16} {:>6} {:>8.4} {:>8.4}", "fold mean", "", self.fold_mean_war, self.fold_mean_uar);
        let width = self.classes.iter().map(String::len).max().unwrap_or(0).max(6);
        let _ = write!(s, "\n{:<width$}", "true\\pred");
        for c in &self.classes {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(self.pooled.confusion.rows()) {
            let _ = write!(s, "{c:<width$}");
            for v in row {
                let _ = write!(s, " {v:>width$}");
            }
            s.push('\n');
        }
        s
    }
}
