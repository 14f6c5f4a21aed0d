use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use leaflet_core::corpus::{load_manifest, validate_corpus, CorpusManifest, ImageRecord, Split, DEFAULT_TEST_PER_CLASS, DEFAULT_TRAIN_PER_CLASS};
use leaflet_core::eval::{evaluate, render_report, sweep_weights, write_confusion_csv};
use leaflet_core::fusion::{read_predictions, write_predictions};
use leaflet_core::image_model::{load_external_scores, ExternalScores, ImageHyperparams, ImageModel};
use leaflet_core::ocr::{canonical_methods, extract_corpus, methods_version, CacheVersions, ExtractionCache, OcrEngine, TesseractEngine, DEFAULT_TIMEOUT};
use leaflet_core::pipeline::{fit_image, fit_text, load_documents, predict, stratified_holdout, ImageScorer, SWEEP_GRID};
use leaflet_core::review::{queue_low_confidence, QueueStore, ServiceLock};
use leaflet_core::synth::{self, SynthConfig};
use leaflet_core::text::{TextHyperparams, TextModel};

use crate::config::{ConfigArgs, PipelineConfig};
use crate::server::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "leaflet", version, about = "Leaflet product classification: OCR text + image branches, late fusion, review queue")]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the manifest against the corpus rules.
    Validate(ValidateArgs),
    /// Run the OCR ensemble over the corpus, filling the extraction cache.
    ExtractText(ExtractArgs),
    /// Train the TF-IDF text model on the train split.
    TrainText(TrainTextArgs),
    /// Train the built-in image model on the train split.
    TrainImage(TrainImageArgs),
    /// Fuse both branches into a prediction file.
    Predict(PredictArgs),
    /// Score a prediction file against the manifest labels.
    Evaluate(EvaluateArgs),
    /// Pick the text weight on a held-out part of the train split.
    SweepWeight(SweepArgs),
    /// Serve the review queue over HTTP.
    Serve,
    /// Queue low-confidence predictions for review.
    Enqueue(EnqueueArgs),
    /// Rebuild the queue snapshot from the event log.
    RebuildQueue,
    /// Write a synthetic corpus with simulated OCR output.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn select(self, m: &CorpusManifest) -> Vec<&ImageRecord> {
        match self {
            SplitArg::Train => m.records_in(Split::Train).collect(),
            SplitArg::Test => m.records_in(Split::Test).collect(),
            SplitArg::All => m.records.iter().collect(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = DEFAULT_TRAIN_PER_CLASS)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = DEFAULT_TEST_PER_CLASS)]
    pub test_per_class: usize,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    /// Per-call engine timeout in seconds.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs())]
    pub timeout: u64,
}

#[derive(Debug, Args)]
pub struct TrainTextArgs {
    /// Where to write the model (defaults to --text-model).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = TextHyperparams::default().eta0)]
    pub eta0: f64,
    #[arg(long, default_value_t = TextHyperparams::default().max_epochs)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
}

#[derive(Debug, Args)]
pub struct TrainImageArgs {
    /// Where to write the model (defaults to --image-model).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = ImageHyperparams::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = ImageHyperparams::default().momentum)]
    pub momentum: f64,
    #[arg(long, default_value_t = ImageHyperparams::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = ImageHyperparams::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Saturation jitter range for training images, e.g. `0.5,1.5`.
    #[arg(long, value_parser = parse_range)]
    pub saturation_jitter: Option<(f64, f64)>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(0.0 <= lo && lo <= hi) {
        return Err("need 0 <= LO <= HI".into());
    }
    Ok((lo, hi))
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Omit per-branch probability vectors from the output.
    #[arg(long)]
    pub compact: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub json: bool,
    /// Also write the confusion pairs as CSV.
    #[arg(long)]
    pub confusion_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub confusion_limit: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Share of each class's training images held out for scoring.
    #[arg(long, default_value_t = 0.2)]
    pub holdout_fraction: f64,
    /// Candidate text weights.
    #[arg(long, value_delimiter = ',', default_values_t = SWEEP_GRID.to_vec())]
    pub weights: Vec<f64>,
    #[arg(long, default_value_t = ImageHyperparams::default().epochs)]
    pub image_epochs: usize,
}

#[derive(Debug, Args)]
pub struct EnqueueArgs {
    #[arg(long)]
    pub predictions: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().train_per_class)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = SynthConfig::default().test_per_class)]
    pub test_per_class: usize,
    #[arg(long = "synth-seed", default_value_t = SynthConfig::default().seed)]
    pub synth_seed: u64,
}

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    ValidationFailed,
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let cfg = PipelineConfig::resolve(&cli.config)?;
    match cli.command {
        Command::Validate(a) => validate(&cfg, &a),
        Command::ExtractText(a) => extract_text(&cfg, &a),
        Command::TrainText(a) => train_text(&cfg, &a),
        Command::TrainImage(a) => train_image(&cfg, &a),
        Command::Predict(a) => predict_cmd(&cfg, &a),
        Command::Evaluate(a) => evaluate_cmd(&cfg, &a),
        Command::SweepWeight(a) => sweep(&cfg, &a),
        Command::Serve => serve(&cfg),
        Command::Enqueue(a) => enqueue(&cfg, &a),
        Command::RebuildQueue => rebuild_queue(&cfg),
        Command::Synth(a) => synth_cmd(&a),
    }
}

fn manifest(cfg: &PipelineConfig) -> Result<CorpusManifest> {
    let path = cfg.require(&cfg.manifest, "manifest")?;
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn documents(cfg: &PipelineConfig, records: &[&ImageRecord]) -> Result<HashMap<String, String>> {
    let path = cfg.require(&cfg.cache, "cache")?;
    Ok(load_documents(path, records)?)
}

fn validate(cfg: &PipelineConfig, a: &ValidateArgs) -> Result<Outcome> {
    let m = manifest(cfg)?;
    let report = validate_corpus(&m, a.train_per_class, a.test_per_class);
    let mut out = std::io::stdout().lock();
    if a.json {
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
    } else if report.ok {
        writeln!(out, "ok: {} images, {} classes", m.records.len(), m.classes.len())?;
    } else {
        for v in &report.violations {
            writeln!(out, "{}\tclass {}\t{}\t{}", v.rule, v.class_id, v.image_id.as_deref().unwrap_or("-"), v.message)?;
        }
        writeln!(out, "{} violation(s)", report.violations.len())?;
    }
    Ok(if report.ok { Outcome::Success } else { Outcome::ValidationFailed })
}

fn extract_text(cfg: &PipelineConfig, a: &ExtractArgs) -> Result<Outcome> {
    let m = manifest(cfg)?;
    let cache_path = cfg.require(&cfg.cache, "cache")?;
    let engine = TesseractEngine::locate(&cfg.tesseract, &cfg.languages, std::time::Duration::from_secs(a.timeout))?;
    let specs = canonical_methods();
    let cache = ExtractionCache::open(
        cache_path,
        CacheVersions {
            engine_version: engine.version(),
            methods_version: methods_version(&specs),
        },
    )?;
    let records = a.split.select(&m);
    let docs = extract_corpus(&m, &records, &specs, &engine, &cache, cfg.workers)?;
    let empty = docs.iter().filter(|d| d.document.is_empty()).count();
    println!("extracted {} documents ({empty} empty) into {}", docs.len(), cache_path.display());
    Ok(Outcome::Success)
}

fn train_text(cfg: &PipelineConfig, a: &TrainTextArgs) -> Result<Outcome> {
    let out = match &a.out {
        Some(p) => p.as_path(),
        None => cfg.require(&cfg.text_model, "text-model")?,
    };
    let m = manifest(cfg)?;
    let train: Vec<&ImageRecord> = m.records_in(Split::Train).collect();
    let docs = documents(cfg, &train)?;
    let hp = TextHyperparams {
        eta0: a.eta0,
        max_epochs: a.max_epochs,
        l2_penalty: a.l2,
        seed: cfg.seed,
        ..TextHyperparams::default()
    };
    let model = fit_text(&m, &train, &docs, hp)?;
    model.save(out)?;
    println!("text model: {} classes, {} terms -> {}", model.n_classes(), model.n_features(), out.display());
    Ok(Outcome::Success)
}

fn train_image(cfg: &PipelineConfig, a: &TrainImageArgs) -> Result<Outcome> {
    let out = match &a.out {
        Some(p) => p.as_path(),
        None => cfg.require(&cfg.image_model, "image-model")?,
    };
    let m = manifest(cfg)?;
    let train: Vec<&ImageRecord> = m.records_in(Split::Train).collect();
    let hp = ImageHyperparams {
        lr: a.lr,
        momentum: a.momentum,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: cfg.seed,
        weight_decay: a.weight_decay,
        saturation_jitter: a.saturation_jitter,
    };
    let model = fit_image(&m, &train, hp)?;
    model.save(out)?;
    println!("image model: {} classes -> {}", model.n_classes(), out.display());
    Ok(Outcome::Success)
}

fn external(cfg: &PipelineConfig, m: &CorpusManifest) -> Result<Option<ExternalScores>> {
    cfg.external_scores
        .as_deref()
        .map(|p| load_external_scores(p, &m.classes).with_context(|| format!("loading external scores {}", p.display())))
        .transpose()
}

fn predict_cmd(cfg: &PipelineConfig, a: &PredictArgs) -> Result<Outcome> {
    let m = manifest(cfg)?;
    let records = a.split.select(&m);
    let docs = documents(cfg, &records)?;
    let text = TextModel::load(cfg.require(&cfg.text_model, "text-model")?)?;
    let ext = external(cfg, &m)?;
    let native;
    let scorer = match &ext {
        Some(e) => ImageScorer::External(e),
        None => {
            native = ImageModel::load(cfg.require(&cfg.image_model, "image-model")?)?;
            ImageScorer::Model(&native)
        }
    };
    let mut preds = predict(&m, &records, &docs, &text, scorer, cfg.text_weight, cfg.top_k)?;
    if a.compact {
        preds = preds.into_iter().map(|p| p.without_probabilities()).collect();
    }
    write_predictions(&a.out, &preds)?;
    let low = preds.iter().filter(|p| p.confidence == leaflet_core::Confidence::Low).count();
    println!("{} predictions ({low} low confidence) -> {}", preds.len(), a.out.display());
    Ok(Outcome::Success)
}

fn evaluate_cmd(cfg: &PipelineConfig, a: &EvaluateArgs) -> Result<Outcome> {
    let m = manifest(cfg)?;
    let preds = read_predictions(&a.predictions)?;
    let truth: HashMap<String, usize> = m.records.iter().map(|r| (r.image_id.clone(), r.class_id)).collect();
    let report = evaluate(&preds, &truth)?;
    if let Some(csv) = &a.confusion_csv {
        write_confusion_csv(csv, &report.confusion_pairs, &m.classes)?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", render_report(&report, &m.classes, a.confusion_limit));
    }
    Ok(Outcome::Success)
}

fn sweep(cfg: &PipelineConfig, a: &SweepArgs) -> Result<Outcome> {
    if !(a.holdout_fraction > 0.0 && a.holdout_fraction < 1.0) {
        bail!("holdout fraction must be strictly between 0 and 1");
    }
    if a.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        bail!("weights must be positive");
    }
    let m = manifest(cfg)?;
    let train: Vec<&ImageRecord> = m.records_in(Split::Train).collect();
    let (fit, held) = stratified_holdout(&train, a.holdout_fraction, cfg.seed);
    if held.is_empty() {
        bail!("holdout is empty; each class needs at least two training images");
    }
    let docs = documents(cfg, &train)?;
    let text = fit_text(&m, &fit, &docs, TextHyperparams { seed: cfg.seed, ..Default::default() })?;
    let ext = external(cfg, &m)?;
    let native;
    let scorer = match &ext {
        Some(e) => ImageScorer::External(e),
        None => {
            native = fit_image(
                &m,
                &fit,
                ImageHyperparams {
                    epochs: a.image_epochs,
                    seed: cfg.seed,
                    ..Default::default()
                },
            )?;
            ImageScorer::Model(&native)
        }
    };
    let preds = predict(&m, &held, &docs, &text, scorer, cfg.text_weight, cfg.top_k)?;
    let truth = m.truth(Split::Train);
    let (scores, best) = sweep_weights(&preds, &truth, &a.weights)?;
    println!("held out {} of {} training images", held.len(), train.len());
    println!("{:>8} {:>9}", "w_text", "accuracy");
    for s in &scores {
        let mark = if s.text_weight == best { " *" } else { "" };
        println!("{:>8} {:>9.4}{mark}", s.text_weight, s.accuracy);
    }
    println!("selected w_text = {best}");
    Ok(Outcome::Success)
}

fn queue_dir(cfg: &PipelineConfig) -> Result<&Path> {
    cfg.require(&cfg.queue, "queue")
}

fn enqueue(cfg: &PipelineConfig, a: &EnqueueArgs) -> Result<Outcome> {
    let m = manifest(cfg)?;
    let preds = read_predictions(&a.predictions)?;
    let records: Vec<&ImageRecord> = preds.iter().filter_map(|p| m.record(&p.image_id)).collect();
    // documents are shown to reviewers when available, never required
    let docs = match &cfg.cache {
        Some(path) => ExtractionCache::open_read_only(path)?
            .documents()
            .into_iter()
            .filter(|d| records.iter().any(|r| r.image_id == d.image_id))
            .map(|d| (d.image_id, d.document))
            .collect(),
        None => HashMap::new(),
    };
    let mut store = QueueStore::create_or_open(queue_dir(cfg)?)?;
    let added = queue_low_confidence(&preds, &m, &docs, &mut store)?;
    let stats = store.state().stats();
    println!("enqueued {added} new item(s); {} pending, {} resolved", stats.pending, stats.resolved);
    Ok(Outcome::Success)
}

fn rebuild_queue(cfg: &PipelineConfig) -> Result<Outcome> {
    let dir = queue_dir(cfg)?;
    if ServiceLock::is_locked(dir) {
        bail!("{} is locked by a running review service", dir.display());
    }
    let store = QueueStore::rebuild(dir)?;
    println!("rebuilt snapshot at seq {} with {} item(s)", store.state().last_seq, store.state().items.len());
    Ok(Outcome::Success)
}

fn serve(cfg: &PipelineConfig) -> Result<Outcome> {
    let dir = queue_dir(cfg)?;
    let m = manifest(cfg)?;
    let store = QueueStore::open(dir)?;
    let _lock = ServiceLock::acquire(dir)?;
    let state = Arc::new(AppState::new(store, &m));
    let app = router(state, cfg.static_dir.clone());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .with_context(|| format!("binding {}", cfg.bind))?;
        println!("serving review queue {} on http://{}", dir.display(), listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    Ok(Outcome::Success)
}

fn synth_cmd(a: &SynthArgs) -> Result<Outcome> {
    let cfg = SynthConfig {
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        seed: a.synth_seed,
    };
    let corpus = synth::generate(&a.out, &cfg)?;
    println!(
        "wrote {} images in {} classes to {} ({}, {})",
        corpus.manifest.records.len(),
        corpus.manifest.classes.len(),
        a.out.display(),
        synth::MANIFEST_FILE,
        synth::OCR_CACHE_FILE
    );
    Ok(Outcome::Success)
}
