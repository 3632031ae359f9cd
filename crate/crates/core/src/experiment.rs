//! Experiment grids and run-directory output.
//!
//! A run directory `<output_dir>/<name>/` holds `config.json`, `history.jsonl`,
//! `metrics.json`, `model.ckpt` and `table.md`. Multi-cell grids also keep one
//! checkpoint per cell under `models/`. Nothing written depends on wall-clock
//! time or paths, so identical configs give identical bytes.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{EmbedderKind, RunConfig};
use crate::ehr::{generate_synthetic_cohort, sparsify_training_set, split_dataset, Dataset};
use crate::embedding::{CachedEmbedder, Embedder, EmbeddingCache, RemoteEmbedder, TrigramEmbedder};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::fusion::{FusionKind, InputDims, Model, ModelConfig};
use crate::kg::{build_index, KnowledgeGraph, NodeIndex};
use crate::metrics::{MetricReport, TABLE_HEADER};
use crate::pipeline::{inputs_and_labels, prepare_dataset, PreparedPatient, Resources};
use crate::rng::{stream, substream};
use crate::text_rag::{Extractor, ExtractorKind, LexiconEntry, LexiconExtractor, RemoteExtractor};
use crate::train::{evaluate, train, EpochRecord, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Main,
    AblateRag,
    AblateFusion,
    Sparsity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub model: ModelConfig,
}

fn variant(label: &str, base: &ModelConfig, f: impl FnOnce(&mut ModelConfig)) -> Variant {
    let mut model = base.clone();
    f(&mut model);
    Variant { label: label.into(), model }
}

/// Single-modality rows with and without retrieval, then the full model.
pub fn rag_variants(base: &ModelConfig) -> Vec<Variant> {
    let only_ts = |m: &mut ModelConfig, rag: bool| {
        m.use_ts = true;
        m.use_text = false;
        m.rag_ts = rag;
        m.rag_text = false;
    };
    let only_text = |m: &mut ModelConfig, rag: bool| {
        m.use_ts = false;
        m.use_text = true;
        m.rag_ts = false;
        m.rag_text = rag;
    };
    vec![
        variant("TS", base, |m| only_ts(m, false)),
        variant("TS+RAG_TS", base, |m| only_ts(m, true)),
        variant("Text", base, |m| only_text(m, false)),
        variant("Text+RAG_Text", base, |m| only_text(m, true)),
        full_variant(base),
    ]
}

pub fn full_variant(base: &ModelConfig) -> Variant {
    variant("REALM", base, |m| {
        m.use_ts = true;
        m.use_text = true;
        m.rag_ts = true;
        m.rag_text = true;
    })
}

/// Both modalities with retrieval, varying only the fusion operator.
pub fn fusion_variants(base: &ModelConfig) -> Vec<Variant> {
    [("TS+Text: Add", FusionKind::Add), ("TS+Text: Concat", FusionKind::Concat), ("TS+Text: Ours", FusionKind::Attention)]
        .into_iter()
        .map(|(label, kind)| {
            let mut v = full_variant(base);
            v.label = label.into();
            v.model.fusion = kind;
            v
        })
        .collect()
}

/// Retrieval backends built from a run config.
pub struct Backends {
    pub kg: KnowledgeGraph,
    pub index: NodeIndex,
    pub embedder: Box<dyn Embedder>,
    pub extractor: Box<dyn Extractor>,
}

impl Backends {
    pub fn from_config(cfg: &RunConfig) -> Result<Backends> {
        let kg = match &cfg.kg.path {
            Some(p) => KnowledgeGraph::load(p)?,
            None => fixtures::mini_kg(),
        };
        let embedder = build_embedder(cfg)?;
        let index = match &cfg.kg.index_path {
            Some(p) => {
                let index = NodeIndex::load(p)?;
                if index.embedder_id() != embedder.id() {
                    return Err(Error::InvalidInput(format!(
                        "index {} was built with {} but {} is configured",
                        p.display(),
                        index.embedder_id(),
                        embedder.id()
                    )));
                }
                index
            }
            None => build_index(&kg, embedder.as_ref())?,
        };
        let extractor = build_extractor(cfg)?;
        Ok(Backends { kg, index, embedder, extractor })
    }

    pub fn resources(&self) -> Resources<'_> {
        Resources {
            kg: &self.kg,
            index: &self.index,
            embedder: self.embedder.as_ref(),
            extractor: self.extractor.as_ref(),
        }
    }
}

pub fn build_embedder(cfg: &RunConfig) -> Result<Box<dyn Embedder>> {
    let inner: Box<dyn Embedder> = match cfg.embedder.kind {
        EmbedderKind::Trigram => Box::new(TrigramEmbedder::new(cfg.embedder.dim)?),
        EmbedderKind::Remote => Box::new(RemoteEmbedder::from_env(cfg.embedder.remote.clone())?),
    };
    Ok(match &cfg.embedder.cache_dir {
        Some(dir) => Box::new(CachedEmbedder::new(inner, Arc::new(EmbeddingCache::on_disk(dir.clone())))),
        None if cfg.embedder.kind == EmbedderKind::Remote => {
            Box::new(CachedEmbedder::new(inner, Arc::new(EmbeddingCache::in_memory())))
        }
        None => inner,
    })
}

#[derive(Deserialize)]
struct RawLexiconEntry {
    term: String,
    category: String,
}

pub fn load_lexicon(path: &Path) -> Result<Vec<LexiconEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let raw: Vec<RawLexiconEntry> = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    Ok(raw.iter().map(|e| LexiconEntry::new(&e.term, &e.category)).collect())
}

pub fn build_extractor(cfg: &RunConfig) -> Result<Box<dyn Extractor>> {
    Ok(match cfg.extractor.kind {
        ExtractorKind::Lexicon => {
            let lex = match &cfg.extractor.lexicon_path {
                Some(p) => load_lexicon(p)?,
                None => fixtures::lexicon(),
            };
            Box::new(LexiconExtractor::new(lex))
        }
        ExtractorKind::Remote => Box::new(RemoteExtractor::from_env(cfg.extractor.model.clone())?),
    })
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.path {
        Some(p) => Dataset::load(p),
        None => generate_synthetic_cohort(&cfg.data.generate),
    }
}

/// Prepared patients for each split. `train_records` keeps the raw training
/// records so sparsity runs can subsample them.
pub struct PreparedSplits {
    pub train_records: Dataset,
    pub train: Vec<PreparedPatient>,
    pub val: Vec<PreparedPatient>,
    pub test: Vec<PreparedPatient>,
    pub dims: InputDims,
}

pub fn prepare_splits(cfg: &RunConfig, ds: &Dataset, backends: &Backends) -> Result<PreparedSplits> {
    let [a, b, c] = cfg.data.split;
    let (train, val, test) = split_dataset(ds, (a, b, c), cfg.seed)?;
    let res = backends.resources();
    let settings = cfg.rag_settings();
    let exec = cfg.experiment.execution;
    Ok(PreparedSplits {
        train: prepare_dataset(&train, &res, &settings, exec)?,
        val: prepare_dataset(&val, &res, &settings, exec)?,
        test: prepare_dataset(&test, &res, &settings, exec)?,
        dims: InputDims { n_features: ds.features.len(), text_dim: backends.embedder.dim() },
        train_records: train,
    })
}

/// One trained and evaluated grid cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub label: String,
    pub drop_fraction: Option<f64>,
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    pub report: MetricReport,
    pub test_scores: Vec<f64>,
}

impl CellResult {
    pub fn display_label(&self) -> String {
        match self.drop_fraction {
            Some(f) => format!("{} ({:.0}% dropped)", self.label, f * 100.0),
            None => self.label.clone(),
        }
    }

    fn checkpoint_extra(&self, cfg: &RunConfig) -> Value {
        json!({
            "label": self.label,
            "drop_fraction": self.drop_fraction,
            "seed": cfg.seed,
            "task": cfg.train.task,
            "best_epoch": self.best_epoch,
            "best_val_auroc": self.best_val_auroc,
        })
    }
}

/// Trains `variant` on `train` and reports bootstrap metrics on the test split.
pub fn run_cell(
    cfg: &RunConfig,
    variant: &Variant,
    train_set: &[PreparedPatient],
    splits: &PreparedSplits,
    drop_fraction: Option<f64>,
) -> Result<CellResult> {
    let task = cfg.train.task;
    let exec = cfg.experiment.execution;
    let (tx, ty) = inputs_and_labels(train_set, task);
    let (vx, vy) = inputs_and_labels(&splits.val, task);
    let (sx, sy) = inputs_and_labels(&splits.test, task);
    let mut rng = substream(cfg.seed, stream::INIT);
    let model = Model::new(variant.model.clone(), splits.dims, &mut rng)?;
    let out = train(model, Split::new(&tx, &ty)?, Split::new(&vx, &vy)?, &cfg.train, cfg.seed, exec)?;
    let (report, test_scores) = evaluate(&out.model, Split::new(&sx, &sy)?, cfg.eval.bootstrap, cfg.seed, exec)?;
    log::info!("{}: test AUROC {}", variant.label, report.auroc.percent());
    Ok(CellResult {
        label: variant.label.clone(),
        drop_fraction,
        model: out.model,
        history: out.history,
        best_epoch: out.best_epoch,
        best_val_auroc: out.best_val_auroc,
        report,
        test_scores,
    })
}

/// Training subset kept after dropping `fraction` of the training patients.
pub fn sparse_train_set(cfg: &RunConfig, splits: &PreparedSplits, fraction: f64) -> Result<Vec<PreparedPatient>> {
    let kept = sparsify_training_set(&splits.train_records, fraction, cfg.seed)?;
    let ids: HashSet<&str> = kept.patients.iter().map(|p| p.id.as_str()).collect();
    Ok(splits.train.iter().filter(|p| ids.contains(p.artifacts.id.as_str())).cloned().collect())
}

pub fn run_grid(kind: ExperimentKind, cfg: &RunConfig, splits: &PreparedSplits) -> Result<Vec<CellResult>> {
    let configured = Variant { label: "REALM".into(), model: cfg.model.clone() };
    match kind {
        ExperimentKind::Main => Ok(vec![run_cell(cfg, &configured, &splits.train, splits, None)?]),
        ExperimentKind::AblateRag => rag_variants(&cfg.model)
            .iter()
            .map(|v| run_cell(cfg, v, &splits.train, splits, None))
            .collect(),
        ExperimentKind::AblateFusion => fusion_variants(&cfg.model)
            .iter()
            .map(|v| run_cell(cfg, v, &splits.train, splits, None))
            .collect(),
        ExperimentKind::Sparsity => cfg
            .experiment
            .drop_fractions
            .iter()
            .map(|&f| run_cell(cfg, &configured, &sparse_train_set(cfg, splits, f)?, splits, Some(f)))
            .collect(),
    }
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn metrics_json(kind: ExperimentKind, cfg: &RunConfig, cells: &[CellResult]) -> Value {
    json!({
        "kind": kind,
        "seed": cfg.seed,
        "task": cfg.train.task,
        "bootstrap": cfg.eval.bootstrap,
        "cells": cells.iter().map(|c| json!({
            "label": c.label,
            "drop_fraction": c.drop_fraction,
            "best_epoch": c.best_epoch,
            "best_val_auroc": c.best_val_auroc,
            "metrics": c.report.to_json(),
        })).collect::<Vec<_>>(),
    })
}

pub fn render_table(title: &str, cells: &[CellResult]) -> String {
    let mut s = format!("## {title}\n\n{TABLE_HEADER}\n");
    for c in cells {
        s.push_str(&c.report.table_row(&c.display_label()));
        s.push('\n');
    }
    s
}

/// Writes every run artifact into `dir`, replacing earlier files of the same name.
pub fn write_run_dir(dir: &Path, kind: ExperimentKind, cfg: &RunConfig, cells: &[CellResult]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write(&dir.join("config.json"), cfg.to_json_pretty())?;

    let mut history = String::new();
    for c in cells {
        for r in &c.history {
            let line = json!({
                "cell": c.label,
                "drop_fraction": c.drop_fraction,
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "val_auroc": r.val_auroc,
                "improved": r.improved,
            });
            history.push_str(&line.to_string());
            history.push('\n');
        }
    }
    write(&dir.join("history.jsonl"), history)?;

    let metrics = serde_json::to_string_pretty(&metrics_json(kind, cfg, cells)).expect("json") + "\n";
    write(&dir.join("metrics.json"), metrics)?;

    let title = format!("{} ({})", cfg.name, serde_json::to_value(kind).expect("json").as_str().unwrap_or("run"));
    write(&dir.join("table.md"), render_table(&title, cells))?;

    if let Some(primary) = cells.iter().rev().find(|c| c.model.config == cfg.model && c.drop_fraction.unwrap_or(0.0) == 0.0).or(cells.last()) {
        primary.model.save_checkpoint(&dir.join("model.ckpt"), &primary.checkpoint_extra(cfg))?;
    }
    if cells.len() > 1 {
        let models = dir.join("models");
        fs::create_dir_all(&models).map_err(|e| Error::io(format!("creating {}", models.display()), e))?;
        for (i, c) in cells.iter().enumerate() {
            let path = models.join(format!("{i}-{}.ckpt", slug(&c.display_label())));
            c.model.save_checkpoint(&path, &c.checkpoint_extra(cfg))?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub cells: Vec<CellResult>,
}

/// Data, retrieval, training, evaluation and output for one experiment kind.
pub fn run_experiment(kind: ExperimentKind, cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let backends = Backends::from_config(cfg)?;
    let splits = prepare_splits(cfg, &ds, &backends)?;
    let cells = run_grid(kind, cfg, &splits)?;
    let dir = cfg.run_dir();
    write_run_dir(&dir, kind, cfg, &cells)?;
    Ok(RunSummary { dir, cells })
}
