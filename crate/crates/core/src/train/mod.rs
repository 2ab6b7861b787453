//! Optimisation, leave-one-speaker-out evaluation, metrics, feature
//! extraction for whole corpora, and the synthetic corpus generator.

mod adamw;
mod dataset;
mod extract;
mod metrics;
mod report;
mod synth;
mod trainer;

pub use adamw::{adamw_update, AdamW, AdamWConfig, StepOutcome};
pub use dataset::{loso_split, DatasetManifest, Fold, LoadedDataset, ManifestRecord, CLASSES_FILE, MANIFEST_FILE};
pub use extract::{extract_corpus, read_labels, write_labels, ExtractFailure, ExtractSummary, LabelRow, FEATURE_DIR, LABELS_FILE};
pub use metrics::{compute_metrics, ConfusionMatrix, Metrics};
pub use report::{EvalReport, FoldReport, PooledMetrics};
pub use synth::{centroid_self_test, synth_dataset, synth_utterance, SelfTest, SynthConfig, SynthSummary, WAV_DIR};
pub use trainer::{
    argmax, checkpoint_path, evaluate, fold_seed, run_loso, train_fold, utterance_decision, EpochLog, FoldOutcome,
    TrainConfig,
};
