use std::fs;
use std::path::Path;

use lgfa::audio::{write_wav, AudioClip, FrontendConfig};
use lgfa::model::{load_checkpoint, save_checkpoint, LgfaConfig, LgfaModel, Precision};
use lgfa::nn::ParamStore;
use lgfa::tensor::Tensor;
use lgfa::train::{
    adamw_update, evaluate, extract_corpus, run_loso, synth_dataset, train_fold, write_labels, AdamW, AdamWConfig,
    DatasetManifest, Fold, LabelRow, LoadedDataset, StepOutcome, SynthConfig, TrainConfig, FEATURE_DIR, LABELS_FILE,
    MANIFEST_FILE, WAV_DIR,
};

const SHAPE: (usize, usize, usize) = (64, 128, 1);

fn tiny_model(n_classes: usize) -> LgfaConfig {
    LgfaConfig {
        depth: 1,
        frame_dim: 4,
        segment_dim: 16,
        frame_heads: 2,
        segment_heads: 2,
        n_classes,
        ..LgfaConfig::default()
    }
}

/// 4 speakers × 2 classes × 4 utterances.
fn small_corpus(dir: &Path, seed: u64) -> LoadedDataset {
    let cfg = SynthConfig {
        n_speakers: 4,
        n_classes: 2,
        per_speaker: 4,
        seed,
        ..Default::default()
    };
    let summary = synth_dataset(&cfg, &FrontendConfig::default(), dir).unwrap();
    LoadedDataset::load(summary.extract.manifest, SHAPE, true).unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn default_corpus_layout() {
    let dir = tempfile::tempdir().unwrap();
    let summary = synth_dataset(&SynthConfig::default(), &FrontendConfig::default(), dir.path()).unwrap();
    let m = &summary.extract.manifest;
    assert_eq!(summary.wav_files.len(), 400);
    assert_eq!(m.records.len(), 400);
    assert_eq!(m.speakers().len(), 4);
    assert_eq!(m.n_classes(), 4);
    for s in m.speakers() {
        for c in 0..4 {
            let n = m.records.iter().filter(|r| r.speaker_id == s && r.label == c).count();
            assert_eq!(n, 25, "{s} class {c}");
        }
    }
    assert!(summary.self_test.passed);
    assert!(summary.self_test.centroid_accuracy > 0.5, "{:?}", summary.self_test);
}

#[test]
fn synthesis_is_deterministic() {
    let cfg = SynthConfig {
        n_speakers: 3,
        n_classes: 2,
        per_speaker: 2,
        seed: 7,
        ..Default::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    synth_dataset(&cfg, &FrontendConfig::default(), a.path()).unwrap();
    synth_dataset(&cfg, &FrontendConfig::default(), b.path()).unwrap();
    synth_dataset(&SynthConfig { seed: 8, ..cfg }, &FrontendConfig::default(), c.path()).unwrap();
    for sub in [WAV_DIR, FEATURE_DIR] {
        assert_eq!(dir_bytes(&a.path().join(sub)), dir_bytes(&b.path().join(sub)), "{sub}");
        assert_ne!(dir_bytes(&a.path().join(sub)), dir_bytes(&c.path().join(sub)), "{sub}");
    }
    assert_eq!(
        fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
        fs::read(b.path().join(MANIFEST_FILE)).unwrap()
    );
}

fn tone(freq: f64) -> AudioClip {
    let samples = (0..8000)
        .map(|i| 0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
        .collect();
    AudioClip::new(samples, 16_000).unwrap()
}

#[test]
fn extraction_is_idempotent() {
    let root = tempfile::tempdir().unwrap();
    let wavs = root.path().join("wav");
    let out = root.path().join("data");
    fs::create_dir_all(&wavs).unwrap();
    let mut rows = Vec::new();
    for (i, f) in [300.0, 600.0, 900.0].into_iter().enumerate() {
        let file = format!("u{i}.wav");
        write_wav(wavs.join(&file), &tone(f)).unwrap();
        rows.push(LabelRow {
            file,
            speaker: format!("s{}", i % 2),
            label: if i == 1 { "sad" } else { "happy" }.into(),
        });
    }
    let labels = wavs.join(LABELS_FILE);
    write_labels(&labels, &rows).unwrap();

    let frontend = FrontendConfig::default();
    let first = extract_corpus(&wavs, &labels, &out, &frontend, None).unwrap();
    assert!(first.failures.is_empty());
    assert_eq!(first.manifest.classes, ["happy", "sad"]);
    assert_eq!(first.manifest.records.len(), 3);
    // Three feature files, three sidecars, manifest and class table.
    assert_eq!(first.written.len(), 8);
    let before = dir_bytes(&out.join(FEATURE_DIR));
    let manifest_before = fs::read(out.join(MANIFEST_FILE)).unwrap();
    let mtime = fs::metadata(out.join(MANIFEST_FILE)).unwrap().modified().unwrap();

    let second = extract_corpus(&wavs, &labels, &out, &frontend, None).unwrap();
    assert!(second.written.is_empty(), "{:?}", second.written);
    assert_eq!(second.skipped, 3);
    assert_eq!(dir_bytes(&out.join(FEATURE_DIR)), before);
    assert_eq!(fs::read(out.join(MANIFEST_FILE)).unwrap(), manifest_before);
    assert_eq!(fs::metadata(out.join(MANIFEST_FILE)).unwrap().modified().unwrap(), mtime);
    assert_eq!(DatasetManifest::load(&out).unwrap(), second.manifest);
}

#[test]
fn extraction_reports_bad_entries_and_continues() {
    let root = tempfile::tempdir().unwrap();
    let wavs = root.path().join("wav");
    fs::create_dir_all(&wavs).unwrap();
    write_wav(wavs.join("ok.wav"), &tone(400.0)).unwrap();
    write_wav(wavs.join("unlabelled.wav"), &tone(400.0)).unwrap();
    write_wav(wavs.join("odd.wav"), &tone(400.0)).unwrap();
    fs::write(wavs.join("broken.wav"), b"not audio").unwrap();
    let rows = [("ok.wav", "calm"), ("odd.wav", "weird"), ("broken.wav", "calm"), ("gone.wav", "calm")]
        .map(|(f, l)| LabelRow {
            file: f.into(),
            speaker: "s0".into(),
            label: l.into(),
        });
    let labels = wavs.join(LABELS_FILE);
    write_labels(&labels, &rows).unwrap();
    let summary = extract_corpus(
        &wavs,
        &labels,
        &root.path().join("data"),
        &FrontendConfig::default(),
        Some(vec!["calm".into()]),
    )
    .unwrap();
    assert_eq!(summary.manifest.records.len(), 1);
    let mut failed: Vec<_> = summary.failures.iter().map(|f| f.file.as_str()).collect();
    failed.sort();
    assert_eq!(failed, ["broken.wav", "gone.wav", "odd.wav", "unlabelled.wav"]);
}

#[test]
fn empty_directory_gives_empty_manifest() {
    let root = tempfile::tempdir().unwrap();
    let wavs = root.path().join("wav");
    fs::create_dir_all(&wavs).unwrap();
    let out = root.path().join("data");
    let summary = extract_corpus(&wavs, &wavs.join(LABELS_FILE), &out, &FrontendConfig::default(), None).unwrap();
    assert!(summary.manifest.records.is_empty());
    assert!(summary.failures.is_empty());
    assert_eq!(fs::read_to_string(out.join(MANIFEST_FILE)).unwrap(), "");
}

#[test]
fn adamw_matches_scalar_reference() {
    let cfg = AdamWConfig {
        learning_rate: 0.01,
        ..Default::default()
    };
    let grads = [0.5, -1.5, 0.0, 2.0, 0.25, -0.75];
    let (mut p, mut m, mut v) = (vec![1.0], vec![0.0], vec![0.0]);
    let (mut rp, mut rm, mut rv) = (1.0f64, 0.0f64, 0.0f64);
    for (i, &g) in grads.iter().enumerate() {
        let t = i as u64 + 1;
        adamw_update(&mut p, &[g], &mut m, &mut v, t, &cfg);
        rm = 0.9 * rm + 0.1 * g;
        rv = 0.999 * rv + 0.001 * g * g;
        let m_hat = rm / (1.0 - 0.9f64.powi(t as i32));
        let v_hat = rv / (1.0 - 0.999f64.powi(t as i32));
        rp -= 0.01 * (m_hat / (v_hat.sqrt() + 1e-8) + 0.01 * rp);
        assert!((p[0] - rp).abs() < 1e-14, "step {t}: {} vs {rp}", p[0]);
    }
    // First step moves each coordinate by about lr, whatever the gradient scale.
    let mut p = vec![0.0, 0.0];
    adamw_update(&mut p, &[1e-3, -50.0], &mut [0.0; 2], &mut [0.0; 2], 1, &cfg);
    assert!((p[0] + 0.01).abs() < 1e-6 && (p[1] - 0.01).abs() < 1e-9);
}

#[test]
fn adamw_skips_non_finite_steps() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::filled(&[3], 1.0));
    let mut opt = AdamW::new(AdamWConfig::default(), &store).unwrap();
    store.get_mut(id).set_grad(vec![0.1, f64::NAN, 0.1]).unwrap();
    assert_eq!(opt.step(&mut store).unwrap(), StepOutcome::Skipped);
    assert_eq!(store.get(id).data(), &[1.0, 1.0, 1.0]);
    store.get_mut(id).set_grad(vec![0.1, 0.1, 0.1]).unwrap();
    assert_eq!(opt.step(&mut store).unwrap(), StepOutcome::Applied);
    assert!(store.get(id).data().iter().all(|&w| w < 1.0));
    assert_eq!((opt.steps(), opt.skipped()), (1, 1));
}

#[test]
fn training_loss_falls() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 3);
    let folds = lgfa::train::loso_split(&data.manifest).unwrap();
    for seed in 0..3 {
        let train = TrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 1e-3,
            seed,
            ..Default::default()
        };
        let out = train_fold(&data, &folds[0], 0, &tiny_model(2), &train).unwrap();
        let losses: Vec<f64> = out.report.epochs.iter().map(|e| e.mean_loss).collect();
        assert_eq!(losses.len(), 5);
        assert!(losses[4] < losses[0], "seed {seed}: {losses:?}");
        assert_eq!(out.report.n_train_utterances, 24);
        assert_eq!(out.report.confusion.total(), 8);
    }
}

#[test]
fn overfits_a_small_training_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 4);
    let all: Vec<usize> = (0..data.manifest.records.len()).collect();
    assert_eq!(all.len(), 32);
    let fold = Fold {
        test_speaker: "all".into(),
        train: all.clone(),
        test: all.clone(),
    };
    let train = TrainConfig {
        epochs: 40,
        batch_size: 8,
        learning_rate: 3e-3,
        weight_decay: 0.0,
        ..Default::default()
    };
    let out = train_fold(&data, &fold, 0, &tiny_model(2), &train).unwrap();
    let last = out.report.epochs.last().unwrap();
    assert!(out.report.war >= 0.95, "WAR {} after loss {}", out.report.war, last.mean_loss);
}

#[test]
fn checkpoints_reproduce_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 5);
    let folds = lgfa::train::loso_split(&data.manifest).unwrap();
    for precision in [Precision::F32, Precision::F64] {
        let train = TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 1e-3,
            precision,
            ..Default::default()
        };
        let out = train_fold(&data, &folds[1], 1, &tiny_model(2), &train).unwrap();
        let path = dir.path().join(format!("{precision:?}.ckpt"));
        save_checkpoint(&out.model, precision, &path).unwrap();
        let (loaded, p) = load_checkpoint(&path).unwrap();
        assert_eq!(p, precision);
        assert_eq!(loaded.config(), out.model.config());
        let spec = &data.samples[folds[1].test[0]][0];
        assert_eq!(loaded.logits(spec).unwrap(), out.model.logits(spec).unwrap());
        let cm = evaluate(&loaded, &data, &folds[1].test).unwrap();
        assert_eq!(cm, out.report.confusion);
    }
}

#[test]
fn fold_scheduling_does_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 6);
    let train = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..Default::default()
    };
    let model = tiny_model(2);
    let serial = run_loso(&data, &model, &train, 1, None).unwrap().to_json().unwrap();
    let again = run_loso(&data, &model, &train, 1, None).unwrap().to_json().unwrap();
    let parallel = run_loso(&data, &model, &train, 3, None).unwrap().to_json().unwrap();
    assert_eq!(serial, again);
    assert_eq!(serial, parallel);
    let report = lgfa::train::EvalReport::from_json(&serial).unwrap();
    assert_eq!(report.folds.len(), 4);
    assert_eq!(report.pooled.confusion.total(), 32);
    let names: Vec<_> = report.folds.iter().map(|f| f.test_speaker.as_str()).collect();
    assert_eq!(names, ["spk00", "spk01", "spk02", "spk03"]);
}

#[test]
fn mismatched_class_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 7);
    let folds = lgfa::train::loso_split(&data.manifest).unwrap();
    let err = train_fold(&data, &folds[0], 0, &tiny_model(3), &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, lgfa::Error::Config(_)), "{err}");
    let _ = LgfaModel::new(tiny_model(2), 0).unwrap();
}
