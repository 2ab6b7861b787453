mod config;
mod run;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lgfa::gradcheck::{run_suite, CheckSettings};
use lgfa::model::{load_checkpoint, Ablation, Precision, Variant};
use lgfa::tensor::OpKind;
use lgfa::train::{
    checkpoint_path, compute_metrics, evaluate, extract_corpus, loso_split, run_loso, synth_dataset, DatasetManifest,
    EvalReport, FoldReport, LoadedDataset, LABELS_FILE,
};

use config::{ConfigError, Overrides, RunConfig};
use run::RunDir;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "lgfa", version, about = "Nested frame/segment transformer for speech emotion recognition")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long, global = true, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Directory in which the timestamped run directory is created.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of cross-validation folds trained concurrently.
    #[arg(long, global = true)]
    parallel_folds: Option<usize>,
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a directory of labelled WAV files into feature files and a manifest.
    Extract {
        /// Directory of WAV files.
        #[arg(long)]
        input: PathBuf,
        /// `file,speaker,label` CSV (defaults to <input>/labels.csv).
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Dataset directory receiving features and the manifest; reused
        /// across runs so unchanged inputs are skipped.
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate the seeded synthetic corpus and extract its features.
    Synth {
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// Utterances per class per speaker.
        #[arg(long)]
        per_speaker: Option<usize>,
    },
    /// Leave-one-speaker-out training and evaluation.
    Train {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate saved fold checkpoints on their held-out speakers.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory holding `fold-<speaker>.ckpt` files.
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Finite-difference gradient verification of every primitive and the
    /// reduced end-to-end model.
    Gradcheck {
        /// Deliberately corrupt one primitive's backward rule.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Train every architecture ablation on the same folds and seed.
    Ablate {
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Standardise every sample to zero mean and unit variance.
    #[arg(long)]
    standardize: bool,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: lgfa::Error| e.to_string())
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: lgfa::Error| e.to_string())
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(format!("unknown precision `{other}` (f32, f64)")),
    }
}

/// A gradient check or self-test that ran but did not pass.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct CheckFailed(String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<clap::Error>() {
            return EXIT_CONFIG;
        }
        if cause.is::<CheckFailed>() {
            return EXIT_CHECK;
        }
        if let Some(e) = cause.downcast_ref::<lgfa::Error>() {
            if matches!(e, lgfa::Error::Config(_) | lgfa::Error::Usage(_)) {
                return EXIT_CONFIG;
            }
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.common.log)
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: common.seed,
        variant: common.variant,
        ablation: common.ablation,
        out: common.out.clone(),
        parallel_folds: common.parallel_folds,
    });
    Ok(cfg)
}

fn apply_train_args(cfg: &mut RunConfig, args: &TrainArgs) {
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if args.standardize {
        cfg.train.standardize = true;
    }
    if let Some(p) = args.precision {
        cfg.train.precision = p;
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.common)?;
    match cli.command {
        Command::Extract { input, labels, data } => {
            cfg.validate()?;
            cmd_extract(&cfg, &input, labels, &data)
        }
        Command::Synth {
            speakers,
            classes,
            per_speaker,
        } => {
            if let Some(n) = speakers {
                cfg.synth.n_speakers = n;
            }
            if let Some(n) = classes {
                cfg.synth.n_classes = n;
            }
            if let Some(n) = per_speaker {
                cfg.synth.per_speaker = n;
            }
            cfg.validate()?;
            cmd_synth(&cfg)
        }
        Command::Train { train } => {
            apply_train_args(&mut cfg, &train);
            cfg.validate()?;
            cmd_train(&cfg)
        }
        Command::Eval { data, checkpoints } => {
            if data.is_some() {
                cfg.data = data;
            }
            cfg.validate()?;
            cmd_eval(&cfg, &checkpoints)
        }
        Command::Gradcheck { inject_fault } => {
            let fault = match inject_fault.as_deref() {
                None => None,
                Some(name) => Some(
                    OpKind::from_name(name).ok_or_else(|| ConfigError(format!("unknown primitive `{name}`")))?,
                ),
            };
            cmd_gradcheck(&cfg, fault)
        }
        Command::Ablate { train } => {
            apply_train_args(&mut cfg, &train);
            cfg.validate()?;
            cmd_ablate(&cfg)
        }
    }
}

fn write_config(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    run.write("config.json", serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(())
}

fn cmd_extract(cfg: &RunConfig, input: &Path, labels: Option<PathBuf>, data: &Path) -> Result<()> {
    if !input.is_dir() {
        return Err(ConfigError(format!("input directory {} does not exist", input.display())).into());
    }
    let labels = labels.unwrap_or_else(|| input.join(LABELS_FILE));
    let run = RunDir::create(&cfg.out_root(), "extract", cfg.seed)?;
    write_config(&run, cfg)?;
    let summary = extract_corpus(input, &labels, data, &cfg.frontend, None)?;
    let report = serde_json::json!({
        "data": data,
        "utterances": summary.manifest.records.len(),
        "written": summary.written,
        "skipped_up_to_date": summary.skipped,
        "failures": summary.failures,
    });
    run.write("extract-report.json", serde_json::to_string_pretty(&report)? + "\n")?;
    run.finish()?;
    println!(
        "{} utterances, {} files written, {} up to date, {} failures; run {}",
        summary.manifest.records.len(),
        summary.written.len(),
        summary.skipped,
        summary.failures.len(),
        run.path().display()
    );
    if !summary.failures.is_empty() {
        for f in &summary.failures {
            eprintln!("{}: {}", f.file, f.error);
        }
        bail!("{} file(s) failed to extract", summary.failures.len());
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let run = RunDir::create(&cfg.out_root(), "synth", cfg.seed)?;
    write_config(&run, cfg)?;
    let corpus = run.join("corpus");
    let summary = synth_dataset(&cfg.synth, &cfg.frontend, &corpus).map_err(|e| match e {
        lgfa::Error::Dataset(msg) if msg.contains("self-test") => anyhow::Error::new(CheckFailed(msg)),
        other => other.into(),
    })?;
    run.write("self-test.json", serde_json::to_string_pretty(&summary.self_test)? + "\n")?;
    run.finish()?;
    println!(
        "{} WAV files, {} manifest records; nearest-centroid LOSO accuracy {:.3} (chance {:.3}); corpus {}",
        summary.wav_files.len(),
        summary.extract.manifest.records.len(),
        summary.self_test.centroid_accuracy,
        summary.self_test.chance,
        corpus.display()
    );
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<LoadedDataset> {
    let dir = cfg
        .data
        .as_ref()
        .ok_or_else(|| ConfigError("no dataset given (use --data or the `data` config key)".into()))?;
    let manifest = DatasetManifest::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if manifest.n_classes() != cfg.model.n_classes {
        return Err(ConfigError(format!(
            "dataset has {} classes but the model is configured for {}",
            manifest.n_classes(),
            cfg.model.n_classes
        ))
        .into());
    }
    manifest.validate_records().map_err(|e| ConfigError(e.to_string()))?;
    let shape = (cfg.model.n_mels, cfg.model.n_frames, cfg.model.channels);
    Ok(LoadedDataset::load(manifest, shape, cfg.train.standardize)?)
}

fn write_report(run: &RunDir, stem: &str, report: &EvalReport) -> Result<()> {
    run.write(&format!("{stem}.json"), report.to_json()?)?;
    run.write(&format!("{stem}.txt"), report.to_table())?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let run = RunDir::create(&cfg.out_root(), "train", cfg.seed)?;
    write_config(&run, cfg)?;
    let ckpt = run.join("checkpoints");
    std::fs::create_dir_all(&ckpt)?;
    let report = run_loso(&data, &cfg.model, &cfg.train, cfg.parallel_folds, Some(&ckpt))?;
    write_report(&run, "report", &report)?;
    run.finish()?;
    print!("{}", report.to_table());
    println!("run {}", run.path().display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoints: &Path) -> Result<()> {
    let dir = cfg
        .data
        .as_ref()
        .ok_or_else(|| ConfigError("no dataset given (use --data)".into()))?;
    let manifest = DatasetManifest::load(dir)?;
    let folds = loso_split(&manifest)?;
    let mut models = Vec::with_capacity(folds.len());
    for fold in &folds {
        let path = checkpoint_path(checkpoints, &fold.test_speaker);
        let (model, _) = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
        models.push(model);
    }
    let model_cfg = models[0].config().clone();
    if models.iter().any(|m| m.config() != &model_cfg) {
        bail!("fold checkpoints were trained with different configurations");
    }
    let shape = (model_cfg.n_mels, model_cfg.n_frames, model_cfg.channels);
    let data = LoadedDataset::load(manifest, shape, cfg.train.standardize)?;
    let run = RunDir::create(&cfg.out_root(), "eval", cfg.seed)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (fold, model) in folds.iter().zip(&models) {
        let confusion = evaluate(model, &data, &fold.test)?;
        let m = compute_metrics(&confusion)?;
        reports.push(FoldReport {
            test_speaker: fold.test_speaker.clone(),
            n_train_utterances: fold.train.len(),
            n_test_utterances: fold.test.len(),
            n_train_samples: 0,
            confusion,
            war: m.war,
            uar: m.uar,
            absent_classes: m.absent_classes,
            epochs: Vec::new(),
        });
    }
    let report = EvalReport::new(
        models[0].summary(),
        model_cfg,
        None,
        data.manifest.classes.clone(),
        reports,
    )?;
    write_report(&run, "report", &report)?;
    run.finish()?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, fault: Option<OpKind>) -> Result<()> {
    let run = RunDir::create(&cfg.out_root(), "gradcheck", cfg.seed)?;
    let settings = CheckSettings {
        fault,
        ..Default::default()
    };
    let report = run_suite(cfg.seed, settings)?;
    run.write("gradcheck.json", serde_json::to_string_pretty(&report)? + "\n")?;
    run.write("gradcheck.txt", report.to_table())?;
    run.finish()?;
    print!("{}", report.to_table());
    if !report.passed {
        let mut msg = String::from("gradient check failed:");
        for c in report.failures() {
            let _ = write!(
                msg,
                " {} (max rel err {:.3e}, worst parameter {}[{}]);",
                c.name, c.max_rel_error, c.worst_input, c.worst_index
            );
        }
        return Err(CheckFailed(msg).into());
    }
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    for ablation in Ablation::ALL {
        let mut m = cfg.model.clone();
        m.ablation = ablation;
        m.validate().map_err(|e| ConfigError(format!("{ablation}: {e}")))?;
    }
    let run = RunDir::create(&cfg.out_root(), "ablate", cfg.seed)?;
    write_config(&run, cfg)?;
    let mut table = format!("{:<12} {:>7} {:>8} {:>8}\n", "ablation", "tokens", "WAR", "UAR");
    for ablation in Ablation::ALL {
        let mut model_cfg = cfg.model.clone();
        model_cfg.ablation = ablation;
        log::info!("training ablation {ablation}");
        let report = run_loso(&data, &model_cfg, &cfg.train, cfg.parallel_folds, None)?;
        write_report(&run, &format!("report-{ablation}"), &report)?;
        let _ = writeln!(
            table,
            "{:<12} {:>7} {:>8.4} {:>8.4}",
            ablation.as_str(),
            report.model.token_counts[0],
            report.pooled.war,
            report.pooled.uar
        );
    }
    run.write("ablation.txt", &table)?;
    run.finish()?;
    print!("{table}");
    Ok(())
}
