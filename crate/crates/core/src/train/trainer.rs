use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{AdamW, AdamWConfig, StepOutcome};
use super::dataset::{loso_split, Fold, LoadedDataset};
use super::metrics::{compute_metrics, ConfusionMatrix};
use super::report::{EvalReport, FoldReport};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, LgfaConfig, LgfaModel, Precision};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Parameter storage precision; with `f32`, weights are rounded to
    /// single precision after every update and checkpoints are exact.
    pub precision: Precision,
    /// Per-sample zero-mean, unit-variance features.
    pub standardize: bool,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            precision: Precision::F32,
            standardize: false,
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        self.optimizer().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Sample-level accuracy on the training set, measured on the fly.
    pub train_war: f64,
    pub skipped_steps: u64,
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub model: LgfaModel,
    pub report: FoldReport,
}

/// Deterministic per-fold seed for a given purpose.
pub fn fold_seed(seed: u64, fold: usize, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 * 16 + purpose);
    rng.next_u64()
}

fn round_to(model: &mut LgfaModel, precision: Precision) {
    if precision == Precision::F32 {
        for (_, t) in model.params_mut().iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Utterance decision: mean of per-sample posteriors, then argmax.
pub fn utterance_decision(posteriors: &[Vec<f64>]) -> usize {
    let n = posteriors.len() as f64;
    let dim = posteriors.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for p in posteriors {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    argmax(&mean)
}

/// Confusion matrix of utterance-level decisions over `records`.
pub fn evaluate(model: &LgfaModel, data: &LoadedDataset, records: &[usize]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(data.manifest.n_classes());
    for &r in records {
        let posteriors = data.samples[r]
            .iter()
            .map(|s| model.posteriors(s))
            .collect::<Result<Vec<_>>>()?;
        cm.record(data.label(r), utterance_decision(&posteriors));
    }
    Ok(cm)
}

/// Trains a fresh model on the fold's training speakers and evaluates it on
/// the held-out speaker.
pub fn train_fold(
    data: &LoadedDataset,
    fold: &Fold,
    fold_index: usize,
    model_cfg: &LgfaConfig,
    train_cfg: &TrainConfig,
) -> Result<FoldOutcome> {
    train_cfg.validate()?;
    if model_cfg.n_classes != data.manifest.n_classes() {
        return Err(Error::Config(format!(
            "model has {} classes, dataset has {}",
            model_cfg.n_classes,
            data.manifest.n_classes()
        )));
    }
    let mut model = LgfaModel::new(model_cfg.clone(), fold_seed(train_cfg.seed, fold_index, 0))?;
    round_to(&mut model, train_cfg.precision);
    let mut optimizer = AdamW::new(train_cfg.optimizer(), model.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed(train_cfg.seed, fold_index, 1));

    let mut order: Vec<(usize, usize)> = fold
        .train
        .iter()
        .flat_map(|&r| (0..data.samples[r].len()).map(move |s| (r, s)))
        .collect();
    if order.is_empty() {
        return Err(Error::Dataset(format!("fold {} has no training samples", fold.test_speaker)));
    }

    let mut epochs = Vec::with_capacity(train_cfg.epochs);
    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let skipped_before = optimizer.skipped();
        for (b, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            model.params_mut().clear_grads();
            let weight = 1.0 / batch.len() as f64;
            for &(r, s) in batch {
                let label = data.label(r);
                let (loss, logits) = model.accumulate_gradients(&data.samples[r][s], label, weight)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "fold {}, epoch {epoch}, batch {b}: loss is {loss} on {}",
                        fold.test_speaker, data.manifest.records[r].utterance_id
                    )));
                }
                loss_sum += loss;
                correct += usize::from(argmax(&logits) == label);
            }
            if optimizer.step(model.params_mut())? == StepOutcome::Applied {
                round_to(&mut model, train_cfg.precision);
            }
        }
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / order.len() as f64,
            train_war: correct as f64 / order.len() as f64,
            skipped_steps: optimizer.skipped() - skipped_before,
        };
        log::info!(
            "fold {} epoch {epoch}/{}: loss {:.4} train WAR {:.4}",
            fold.test_speaker,
            train_cfg.epochs,
            log.mean_loss,
            log.train_war
        );
        epochs.push(log);
    }
    model.params_mut().clear_grads();

    let confusion = evaluate(&model, data, &fold.test)?;
    let metrics = compute_metrics(&confusion)?;
    let report = FoldReport {
        test_speaker: fold.test_speaker.clone(),
        n_train_utterances: fold.train.len(),
        n_test_utterances: fold.test.len(),
        n_train_samples: order.len(),
        confusion,
        war: metrics.war,
        uar: metrics.uar,
        absent_classes: metrics.absent_classes,
        epochs,
    };
    Ok(FoldOutcome { model, report })
}

pub fn checkpoint_path(dir: &Path, speaker: &str) -> PathBuf {
    dir.join(format!("fold-{speaker}.ckpt"))
}

/// Runs every leave-one-speaker-out fold, optionally `parallel_folds` at a
/// time, and pools the results. Fold order in the report is speaker order
/// regardless of scheduling.
pub fn run_loso(
    data: &LoadedDataset,
    model_cfg: &LgfaConfig,
    train_cfg: &TrainConfig,
    parallel_folds: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<EvalReport> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let folds = loso_split(&data.manifest)?;
    let workers = parallel_folds.clamp(1, folds.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FoldReport>>>> = Mutex::new((0..folds.len()).map(|_| None).collect());

    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(fold) = folds.get(i) else { break };
        let outcome = train_fold(data, fold, i, model_cfg, train_cfg).and_then(|o| {
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(&o.model, train_cfg.precision, checkpoint_path(dir, &fold.test_speaker))?;
            }
            Ok(o.report)
        });
        results.lock().unwrap()[i] = Some(outcome);
    };
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }

    let reports = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every fold is scheduled"))
        .collect::<Result<Vec<_>>>()?;
    let summary = LgfaModel::new(model_cfg.clone(), 0)?.summary();
    EvalReport::new(
        summary,
        model_cfg.clone(),
        Some(train_cfg.clone()),
        data.manifest.classes.clone(),
        reports,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn utterance_decision_averages_posteriors() {
        // Sample-level votes would be a tie; the mean posterior favours class 1.
        let p = vec![vec![0.55, 0.45], vec![0.1, 0.9]];
        assert_eq!(utterance_decision(&p), 1);
        assert_eq!(utterance_decision(&[vec![0.5, 0.5]]), 0);
    }

    #[test]
    fn fold_seeds_differ_by_fold_and_purpose() {
        assert_ne!(fold_seed(1, 0, 0), fold_seed(1, 1, 0));
        assert_ne!(fold_seed(1, 0, 0), fold_seed(1, 0, 1));
        assert_eq!(fold_seed(5, 2, 1), fold_seed(5, 2, 1));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.batch_size), (1e-4, 64));
        c.validate().unwrap();
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 1}"#).is_err());
    }
}
