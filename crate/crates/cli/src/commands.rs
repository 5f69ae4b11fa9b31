use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use lus_core::dataset::{
    filter_and_label, load_manifest, load_split_overrides, make_splits, write_resolved_manifest, BinaryLabel,
    ManifestSchema, OriginalClass, Probe, Split, VideoRecord, Vocabulary,
};
use lus_core::evaluation::{self, format_percent, plot_curves, write_report, EvalError, ReportFormat};
use lus_core::model::{load_model, save_model, FeatureSequence, Model, ModelError};
use lus_core::preprocess::{preprocess_video, ArrayStore};
use lus_core::synthetic;
use lus_core::trainer::{self, write_history, Sample, TrainError};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, RUN_FILE};
use crate::error::{Classify, CliError, CliResult, ExitKind};

/// Files under the work directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Layout { root: cfg.work_dir().to_path_buf() }
    }
    pub fn run_file(&self) -> PathBuf {
        self.root.join(RUN_FILE)
    }
    pub fn splits(&self) -> PathBuf {
        self.root.join("splits.csv")
    }
    pub fn exclusions(&self) -> PathBuf {
        self.root.join("exclusions.csv")
    }
    pub fn clips(&self, preprocess_digest: &str) -> PathBuf {
        self.root.join("clips").join(preprocess_digest)
    }
    pub fn features(&self, key: &str) -> PathBuf {
        self.root.join("features").join(key)
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("history.csv")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }
}

fn fail(kind: ExitKind, msg: String) -> CliError {
    CliError { kind, error: anyhow!(msg) }
}

fn model_err(e: ModelError) -> CliError {
    let kind = match e {
        ModelError::InvalidConfig(_) => ExitKind::Usage,
        ModelError::NonFinite => ExitKind::Runtime,
        _ => ExitKind::Data,
    };
    CliError { kind, error: e.into() }
}

fn train_err(e: TrainError) -> CliError {
    let kind = match e {
        TrainError::InvalidConfig(_) => ExitKind::Usage,
        TrainError::NonFinite { .. } => ExitKind::Runtime,
        _ => ExitKind::Data,
    };
    CliError { kind, error: e.into() }
}

fn eval_err(e: EvalError) -> CliError {
    let kind = match e {
        EvalError::Plot(_) => ExitKind::Runtime,
        _ => ExitKind::Data,
    };
    CliError { kind, error: e.into() }
}

#[derive(Debug, Clone, Serialize)]
struct Exclusion {
    id: String,
    filename: String,
    stage: &'static str,
    reason: String,
}

fn ineligibility(r: &VideoRecord) -> String {
    match (r.probe, r.original_class) {
        (p, _) if p != Probe::Convex => format!("probe is {}, only convex is used", p.as_str()),
        (_, OriginalClass::Other) => "class `other` is not used".to_string(),
        _ => "not eligible".to_string(),
    }
}

fn write_exclusions(path: &Path, rows: &[Exclusion]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).runtime()?;
    if rows.is_empty() {
        w.write_record(["id", "filename", "stage", "reason"]).runtime()?;
    }
    for r in rows {
        w.serialize(r).runtime()?;
    }
    w.flush().runtime()
}

fn read_excluded_ids(path: &Path) -> CliResult<HashSet<String>> {
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let mut r = csv::Reader::from_path(path).data()?;
    let mut ids = HashSet::new();
    for row in r.records() {
        let row = row.data()?;
        if row.get(2) == Some("decode") {
            ids.insert(row.get(0).unwrap_or_default().to_string());
        }
    }
    Ok(ids)
}

fn split_counts(records: &[VideoRecord]) -> BTreeMap<(Split, BinaryLabel), usize> {
    let mut m = BTreeMap::new();
    for r in records {
        if let (Some(s), Some(l)) = (r.split, r.binary_label) {
            *m.entry((s, l)).or_insert(0) += 1;
        }
    }
    m
}

fn describe_splits(records: &[VideoRecord]) -> String {
    let counts = split_counts(records);
    Split::ALL
        .iter()
        .map(|&s| {
            let p = counts.get(&(s, BinaryLabel::Positive)).copied().unwrap_or(0);
            let n = counts.get(&(s, BinaryLabel::Negative)).copied().unwrap_or(0);
            format!("{s} {} ({p} positive / {n} negative)", p + n)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn prepare(cfg: &RunConfig) -> CliResult<()> {
    let layout = Layout::new(cfg);
    std::fs::create_dir_all(&layout.root)
        .with_context(|| format!("creating {}", layout.root.display()))
        .runtime()?;
    if let Some(spec) = &cfg.synthetic {
        let dir = cfg.synthetic_dir();
        synthetic::generate(&dir, spec).runtime()?;
        log::info!("generated synthetic videos in {}", dir.display());
    }
    let manifest = cfg
        .paths
        .manifest
        .clone()
        .ok_or_else(|| fail(ExitKind::Usage, "no manifest given; pass --manifest or --synthetic".into()))?;
    let mut schema = ManifestSchema::by_name(&cfg.dataset.schema).usage()?;
    if let Some(v) = &cfg.dataset.vocabulary {
        schema = schema.with_vocabulary(Vocabulary::from_path(v).data()?);
    }
    let records = load_manifest(&manifest, &schema).data()?;
    let video_root = cfg
        .paths
        .video_root
        .clone()
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());

    let mut exclusions: Vec<Exclusion> = records
        .iter()
        .filter(|r| r.binary_label.is_none())
        .map(|r| Exclusion {
            id: r.id.clone(),
            filename: r.file_path.display().to_string(),
            stage: "filter",
            reason: ineligibility(r),
        })
        .collect();
    let overrides = cfg.dataset.split_overrides.as_deref().map(load_split_overrides).transpose().data()?;
    let eligible = make_splits(&filter_and_label(&records), &cfg.split, overrides.as_ref()).data()?;
    write_resolved_manifest(&eligible, &layout.splits()).runtime()?;
    println!("manifest rows: {}, eligible videos: {}", records.len(), eligible.len());
    println!("splits: {}", describe_splits(&eligible));

    cfg.preprocess.validate().usage()?;
    let store = ArrayStore::open(layout.clips(&cfg.preprocess.digest())).runtime()?;
    let todo: Vec<&VideoRecord> = eligible.iter().filter(|r| !store.contains(&r.id)).collect();
    let reused = eligible.len() - todo.len();
    let failures: Vec<Exclusion> = todo
        .par_iter()
        .filter_map(|r| {
            let path = video_root.join(&r.file_path);
            let result = preprocess_video(&r.id, &path, &cfg.preprocess)
                .map_err(anyhow::Error::from)
                .and_then(|clip| store.put_clip(&clip).map_err(anyhow::Error::from));
            match result {
                Ok(()) => None,
                Err(e) => {
                    log::error!("excluding {}: {e:#}", r.id);
                    Some(Exclusion {
                        id: r.id.clone(),
                        filename: r.file_path.display().to_string(),
                        stage: "decode",
                        reason: format!("{e:#}"),
                    })
                }
            }
        })
        .collect();
    let processed = todo.len() - failures.len();
    let failed = failures.len();
    exclusions.extend(failures);
    write_exclusions(&layout.exclusions(), &exclusions)?;
    std::fs::write(layout.run_file(), cfg.to_toml()).runtime()?;

    println!("clips: {processed} processed, {reused} reused, {failed} failed");
    if !exclusions.is_empty() {
        println!("excluded: {} video(s), listed in {}", exclusions.len(), layout.exclusions().display());
    }
    Ok(())
}

fn require_prepared(layout: &Layout) -> CliResult<Vec<VideoRecord>> {
    if !layout.run_file().exists() || !layout.splits().exists() {
        return Err(fail(
            ExitKind::Data,
            format!("{} has no prepared data; run `lus prepare` first", layout.root.display()),
        ));
    }
    load_manifest(&layout.splits(), &ManifestSchema::default()).data()
}

/// Embedded samples of one split, using and filling the feature cache.
fn split_samples(layout: &Layout, records: &[VideoRecord], model: &Model, split: Split) -> CliResult<Vec<Sample>> {
    let excluded = read_excluded_ids(&layout.exclusions())?;
    let clips = ArrayStore::open(layout.clips(&model.preprocess.digest())).runtime()?;
    let key = format!("{}-{}", model.preprocess.digest(), &model.backbone.digest()[..16]);
    let cache = ArrayStore::open(layout.features(&key)).runtime()?;
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.split == Some(split)) {
        if excluded.contains(&r.id) {
            log::warn!("skipping {} (excluded during prepare)", r.id);
            continue;
        }
        let cached = cache.get(&r.id).ok().and_then(|a| FeatureSequence::from_stored(&a));
        let sequence = match cached {
            Some(s) => s,
            None => {
                if !clips.contains(&r.id) {
                    return Err(fail(
                        ExitKind::Data,
                        format!("no clip for {} under the current preprocessing config; run `lus prepare` first", r.id),
                    ));
                }
                let clip = clips.get_clip(&r.id).data()?;
                let seq = model.extract_features(&clip).map_err(model_err)?;
                cache.put(&seq.to_stored(&r.id)).runtime()?;
                seq
            }
        };
        out.push(Sample { id: r.id.clone(), label: r.binary_label.expect("eligible records are labelled"), sequence });
    }
    Ok(out)
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let records = require_prepared(&layout)?;
    let model = Model::new(&cfg.model, &cfg.preprocess, cfg.train.seed).map_err(model_err)?;
    let train_set = split_samples(&layout, &records, &model, Split::Train)?;
    let val_set = split_samples(&layout, &records, &model, Split::Val)?;
    log::info!("training on {} videos, validating on {}", train_set.len(), val_set.len());

    let out = trainer::train(model, &train_set, &val_set, &cfg.train).map_err(train_err)?;
    save_model(&out.model, &layout.checkpoint()).runtime()?;
    write_history(&out.history, &layout.history()).runtime()?;
    let why = if out.stopped_early { "early stop" } else { "epoch budget reached" };
    println!("epochs run: {} ({why})", out.history.len());
    println!("best {}: {} at epoch {}", cfg.train.monitor, out.best_value, out.best_epoch);
    println!("checkpoint: {}", layout.checkpoint().display());
    println!("history: {}", layout.history().display());
    Ok(())
}

fn open_checkpoint(path: &Path) -> CliResult<Model> {
    if !path.exists() {
        return Err(fail(ExitKind::Data, format!("checkpoint {} not found; run `lus train` first", path.display())));
    }
    load_model(path, None).map_err(model_err)
}

pub fn evaluate(cfg: &RunConfig, split: Split, checkpoint: Option<&Path>) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| layout.checkpoint());
    let model = open_checkpoint(&ckpt)?;
    let records = require_prepared(&layout)?;
    let samples = split_samples(&layout, &records, &model, split)?;
    let threshold = cfg.model.classification_threshold;
    let report = evaluation::evaluate(&model, &samples, threshold).map_err(eval_err)?;

    std::fs::create_dir_all(layout.reports()).runtime()?;
    let json = layout.reports().join(format!("{split}.json"));
    let csv = layout.reports().join(format!("{split}.csv"));
    write_report(&report, &json, ReportFormat::Json).map_err(eval_err)?;
    write_report(&report, &csv, ReportFormat::Csv).map_err(eval_err)?;

    let m = &report.matrix;
    println!("{split}: {} videos, threshold {threshold}", m.total());
    println!("confusion: tp={} fp={} fn={} tn={}", m.tp, m.fp, m.fn_, m.tn);
    let names = ["accuracy", "sensitivity (positive)", "sensitivity (negative)", "precision (positive)", "precision (negative)"];
    for (name, v) in names.iter().zip(report.metrics.values()) {
        match v {
            Some(v) => println!("{name}: {}%", format_percent(v)),
            None => println!("{name}: n/a"),
        }
    }
    println!("report: {} and {}", json.display(), csv.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct PredictionRecord {
    path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<BinaryLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

const STILL_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// A directory holding only still images is one frame-sequence video.
fn is_frame_directory(p: &Path) -> bool {
    let Ok(entries) = std::fs::read_dir(p) else { return false };
    let paths: Vec<PathBuf> = entries.flatten().map(|e| e.path()).collect();
    !paths.is_empty()
        && paths.iter().all(|n| {
            n.is_file()
                && n.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| STILL_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
}

/// Expand directories of videos into their entries. Returns the inputs and
/// whether this is a batch (more than one path, or a directory of videos).
fn expand_inputs(paths: &[PathBuf]) -> CliResult<(Vec<PathBuf>, bool)> {
    let mut out = Vec::new();
    let mut batch = paths.len() > 1;
    for p in paths {
        if p.is_dir() && !is_frame_directory(p) {
            batch = true;
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))
                .data()?
                .flatten()
                .map(|e| e.path())
                .filter(|e| !e.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
                .collect();
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    Ok((out, batch))
}

pub fn predict(cfg: &RunConfig, checkpoint: Option<&Path>, output: Option<&Path>, json: bool, paths: &[PathBuf]) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| layout.checkpoint());
    let model = open_checkpoint(&ckpt)?;
    let threshold = cfg.model.classification_threshold;
    let (inputs, batch) = expand_inputs(paths)?;

    let records: Vec<PredictionRecord> = inputs
        .iter()
        .map(|path| {
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let result = preprocess_video(&id, path, &model.preprocess)
                .map_err(anyhow::Error::from)
                .and_then(|clip| model.extract_features(&clip).map_err(anyhow::Error::from))
                .and_then(|seq| model.forward(&seq).map_err(anyhow::Error::from));
            match result {
                Ok(p) => PredictionRecord {
                    path: path.display().to_string(),
                    label: Some(lus_core::model::predict(p, threshold)),
                    probability: Some(p),
                    error: None,
                },
                Err(e) => PredictionRecord { path: path.display().to_string(), label: None, probability: None, error: Some(format!("{e:#}")) },
            }
        })
        .collect();

    let record_path = output.map(Path::to_path_buf).unwrap_or_else(|| layout.predictions());
    if let Some(dir) = record_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).runtime()?;
    }
    let mut sink = std::io::BufWriter::new(std::fs::File::create(&record_path).runtime()?);
    for r in &records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(sink, "{line}").runtime()?;
        if json {
            println!("{line}");
        } else if let (Some(l), Some(p)) = (r.label, r.probability) {
            if batch {
                println!("{l} p={p:.4} {}", r.path);
            } else {
                println!("{l} p={p:.4}");
            }
        }
    }
    sink.flush().runtime()?;

    let failed: Vec<&PredictionRecord> = records.iter().filter(|r| r.error.is_some()).collect();
    if !failed.is_empty() {
        eprintln!("failed ({} of {}):", failed.len(), records.len());
        for r in &failed {
            let err = r.error.as_deref().unwrap_or_default();
            if err.starts_with(&r.path) {
                eprintln!("  {err}");
            } else {
                eprintln!("  {}: {err}", r.path);
            }
        }
    }
    if records.is_empty() {
        return Err(fail(ExitKind::Data, "no videos found".into()));
    }
    if failed.len() == records.len() {
        let msg = if batch { "no video could be classified".to_string() } else { failed[0].error.clone().unwrap_or_default() };
        return Err(fail(ExitKind::Data, msg));
    }
    Ok(())
}

pub fn plot(cfg: &RunConfig, history: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let history = history.map(Path::to_path_buf).unwrap_or_else(|| layout.history());
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| layout.plots());
    if !history.exists() {
        return Err(fail(ExitKind::Data, format!("history file {} not found; run `lus train` first", history.display())));
    }
    let files = plot_curves(&history, &out).map_err(eval_err)?;
    for p in [&files.accuracy_png, &files.loss_png, &files.lr_png] {
        println!("{}", p.display());
    }
    println!("plotted values: {}, {}, {}", files.accuracy_csv.display(), files.loss_csv.display(), files.lr_csv.display());
    Ok(())
}
