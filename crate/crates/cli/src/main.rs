use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use realm::config::{load_config, parse_override, RunConfig};
use realm::ehr::{generate_synthetic_cohort, Dataset};
use realm::entity::Modality;
use realm::experiment::{
    build_embedder, load_dataset, prepare_splits, run_experiment, Backends, ExperimentKind,
};
use realm::fusion::Model;
use realm::importance::entity_importance;
use realm::kg::{assemble_bundle, build_index, match_entities, KnowledgeGraph};
use realm::metrics::{MetricReport, TABLE_HEADER};
use realm::par;
use realm::pipeline::{inputs_and_labels, text_entities};
use realm::train::{evaluate, Split};
use realm::ts_rag::extract_ts_entities;
use realm::{fixtures, Error};

#[derive(Parser)]
#[command(name = "realm", version, about = "Retrieval-augmented multimodal EHR prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random substream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override any config leaf, e.g. `--set model.d=64`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Validate and print the resolved config without doing any work.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Run name (directory under the output dir).
    #[arg(long, global = true)]
    name: Option<String>,
}

#[derive(Args, Clone, Default)]
struct Pipeline {
    /// Dataset directory written by `gen-data`; a cohort is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Knowledge graph JSONL file.
    #[arg(long)]
    kg: Option<PathBuf>,
    /// Prebuilt node index written by `build-index`.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Time-series anomaly threshold.
    #[arg(long, visible_alias = "ts-threshold")]
    eps: Option<f64>,
    /// Cosine threshold for knowledge-graph matching.
    #[arg(long)]
    eta: Option<f64>,
    /// Prediction task.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Mortality,
    Readmission,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    Rag,
    Fusion,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Embed knowledge-graph nodes into a reusable index file.
    BuildIndex {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kg: Option<PathBuf>,
        #[arg(long, default_value = "index.bin")]
        out: PathBuf,
    },
    /// Extract time-series and text entities per patient (JSONL).
    Extract {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipe: Pipeline,
        #[arg(long, default_value = "entities.jsonl")]
        out: PathBuf,
    },
    /// Match extracted entities to knowledge-graph nodes (JSONL).
    Match {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipe: Pipeline,
        #[arg(long, default_value = "matches.jsonl")]
        out: PathBuf,
    },
    /// Assemble per-modality knowledge bundles (JSONL).
    Assemble {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipe: Pipeline,
        #[arg(long, default_value = "bundles.jsonl")]
        out: PathBuf,
    },
    /// Train the configured model and write a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipe: Pipeline,
        /// Output root; the run lands in `<out>/<name>/`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate a run's checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipe: Pipeline,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrieval or fusion ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipe: Pipeline,
        #[arg(long, value_enum, default_value = "rag")]
        grid: Grid,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on progressively smaller training sets.
    Sparsity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipe: Pipeline,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank extracted entities by permutation importance.
    Importance {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipe: Pipeline,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Rows to print.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Print the metric tables of finished runs.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories; defaults to the configured run.
        runs: Vec<PathBuf>,
    },
}

fn push(ov: &mut Vec<String>, key: &str, v: Option<impl ToString>) {
    if let Some(v) = v {
        ov.push(format!("{key}={}", v.to_string()));
    }
}

fn json_str(p: &Path) -> String {
    Value::String(p.display().to_string()).to_string()
}

impl Pipeline {
    fn overrides(&self, ov: &mut Vec<String>) {
        push(ov, "data.path", self.data.as_deref().map(json_str));
        push(ov, "kg.path", self.kg.as_deref().map(json_str));
        push(ov, "kg.index_path", self.index.as_deref().map(json_str));
        push(ov, "thresholds.eps", self.eps);
        push(ov, "thresholds.eta", self.eta);
        push(
            ov,
            "train.task",
            self.task.map(|t| match t {
                TaskArg::Mortality => "mortality",
                TaskArg::Readmission => "readmission",
            }),
        );
    }
}

/// File first, then `--set`, then dedicated flags.
fn resolve(common: &Common, flags: &[String]) -> realm::Result<RunConfig> {
    let mut raw = common.set.clone();
    push(&mut raw, "seed", common.seed);
    push(&mut raw, "name", common.name.as_deref().map(|n| Value::String(n.into()).to_string()));
    raw.extend_from_slice(flags);
    let overrides = raw.iter().map(|s| parse_override(s)).collect::<realm::Result<Vec<_>>>()?;
    load_config(common.config.as_deref(), &overrides)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> realm::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_jsonl(path: &Path, rows: &[Value]) -> realm::Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    write_file(path, s)
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Extract,
    Match,
    Assemble,
}

fn retrieval_stage(cfg: &RunConfig, stage: Stage, out: &Path) -> realm::Result<()> {
    let ds = load_dataset(cfg)?;
    let backends = Backends::from_config(cfg)?;
    let res = backends.resources();
    let settings = cfg.rag_settings();
    let rows = par::map(cfg.experiment.execution, &ds.patients, |rec| -> realm::Result<Value> {
        let ts = extract_ts_entities(rec, &ds.features, settings.eps)?;
        let (text, rounds) = text_entities(rec, &res, &settings.extraction)?;
        if stage == Stage::Extract {
            return Ok(json!({"id": rec.id, "ts_entities": ts, "text_entities": text, "extraction_rounds": rounds}));
        }
        let tm = match_entities(&ts, res.index, res.embedder, settings.eta)?;
        let xm = match_entities(&text, res.index, res.embedder, settings.eta)?;
        if stage == Stage::Match {
            return Ok(json!({"id": rec.id, "ts_matches": tm, "text_matches": xm}));
        }
        Ok(json!({
            "id": rec.id,
            "ts_bundle": assemble_bundle(&tm, res.kg, Modality::Ts)?,
            "text_bundle": assemble_bundle(&xm, res.kg, Modality::Text)?,
        }))
    })
    .into_iter()
    .collect::<realm::Result<Vec<_>>>()?;
    write_jsonl(out, &rows)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn experiment(cfg: &RunConfig, kind: ExperimentKind) -> realm::Result<()> {
    let summary = run_experiment(kind, cfg)?;
    let table = fs::read_to_string(summary.dir.join("table.md")).unwrap_or_default();
    print!("{table}");
    println!("\nrun directory: {}", summary.dir.display());
    Ok(())
}

fn eval(cfg: &RunConfig) -> realm::Result<()> {
    let dir = cfg.run_dir();
    let (model, extra) = Model::load_checkpoint(&dir.join("model.ckpt"))?;
    let ds = load_dataset(cfg)?;
    let backends = Backends::from_config(cfg)?;
    let splits = prepare_splits(cfg, &ds, &backends)?;
    let (xs, ys) = inputs_and_labels(&splits.test, cfg.train.task);
    let (report, _) = evaluate(&model, Split::new(&xs, &ys)?, cfg.eval.bootstrap, cfg.seed, cfg.experiment.execution)?;
    let label = extra.get("label").and_then(Value::as_str).unwrap_or("model").to_string();
    let out = json!({"label": label, "checkpoint": extra, "metrics": report.to_json()});
    write_file(&dir.join("eval.json"), serde_json::to_string_pretty(&out).expect("json") + "\n")?;
    println!("{TABLE_HEADER}\n{}", report.table_row(&label));
    Ok(())
}

fn importance(cfg: &RunConfig, out: Option<PathBuf>, top: usize) -> realm::Result<()> {
    let ds = load_dataset(cfg)?;
    let backends = Backends::from_config(cfg)?;
    let res = backends.resources();
    let settings = cfg.rag_settings();
    let sets = par::map(cfg.experiment.execution, &ds.patients, |rec| {
        let mut set = extract_ts_entities(rec, &ds.features, settings.eps)?;
        let (text, _) = text_entities(rec, &res, &settings.extraction)?;
        for e in text.iter() {
            set.insert(e.clone());
        }
        Ok(set)
    })
    .into_iter()
    .collect::<realm::Result<Vec<_>>>()?;
    let labels: Vec<u8> = ds.patients.iter().map(|p| p.label(cfg.train.task)).collect();
    let ranked = entity_importance(&sets, &labels, cfg.seed, &cfg.experiment.importance)?;
    let path = out.unwrap_or_else(|| cfg.run_dir().join("importance.json"));
    write_file(&path, serde_json::to_string_pretty(&ranked).expect("json") + "\n")?;
    println!("| Rank | Entity | Importance | Support |\n|---|---|---|---|");
    for (i, r) in ranked.iter().take(top).enumerate() {
        println!("| {} | {} | {:.4} | {:.3} |", i + 1, r.entity, r.importance, r.support);
    }
    println!("\nwrote {}", path.display());
    Ok(())
}

fn report(cfg: &RunConfig, runs: &[PathBuf]) -> realm::Result<()> {
    let dirs = if runs.is_empty() { vec![cfg.run_dir()] } else { runs.to_vec() };
    for dir in dirs {
        let path = dir.join("metrics.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        println!("## {} ({})\n\n{TABLE_HEADER}", dir.display(), v["kind"].as_str().unwrap_or("?"));
        for cell in v["cells"].as_array().into_iter().flatten() {
            let report: MetricReport =
                serde_json::from_value(cell["metrics"].clone()).map_err(|e| Error::json(path.display().to_string(), e))?;
            let mut label = cell["label"].as_str().unwrap_or("?").to_string();
            if let Some(f) = cell["drop_fraction"].as_f64() {
                label = format!("{label} ({:.0}% dropped)", f * 100.0);
            }
            println!("{}", report.table_row(&label));
        }
        println!();
    }
    Ok(())
}

fn run(cli: Cli) -> realm::Result<()> {
    let mut flags = Vec::new();
    let (common, pipe) = match &cli.command {
        Command::GenData { common, n, .. } => {
            push(&mut flags, "data.generate.n_patients", *n);
            (common, None)
        }
        Command::BuildIndex { common, kg, .. } => {
            push(&mut flags, "kg.path", kg.as_deref().map(json_str));
            (common, None)
        }
        Command::Extract { common, pipe, .. }
        | Command::Match { common, pipe, .. }
        | Command::Assemble { common, pipe, .. } => (common, Some(pipe)),
        Command::Train { common, pipe, out }
        | Command::Eval { common, pipe, out }
        | Command::Sparsity { common, pipe, out }
        | Command::Ablate { common, pipe, out, .. } => {
            push(&mut flags, "output_dir", out.as_deref().map(json_str));
            (common, Some(pipe))
        }
        Command::Importance { common, pipe, .. } => (common, Some(pipe)),
        Command::Report { common, .. } => (common, None),
    };
    if let Some(p) = pipe {
        p.overrides(&mut flags);
    }
    let cfg = resolve(common, &flags)?;
    if common.dry_run {
        print!("{}", cfg.to_json_pretty());
        std::io::stdout().flush().ok();
        return Ok(());
    }
    match cli.command {
        Command::GenData { out, .. } => {
            let ds: Dataset = generate_synthetic_cohort(&cfg.data.generate)?;
            ds.save(&out)?;
            println!("wrote {} patients to {}", ds.len(), out.display());
            Ok(())
        }
        Command::BuildIndex { out, .. } => {
            let kg = match &cfg.kg.path {
                Some(p) => KnowledgeGraph::load(p)?,
                None => fixtures::mini_kg(),
            };
            let embedder = build_embedder(&cfg)?;
            let index = build_index(&kg, embedder.as_ref())?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
            index.save(&out)?;
            println!("indexed {} nodes with {} into {}", index.len(), index.embedder_id(), out.display());
            Ok(())
        }
        Command::Extract { out, .. } => retrieval_stage(&cfg, Stage::Extract, &out),
        Command::Match { out, .. } => retrieval_stage(&cfg, Stage::Match, &out),
        Command::Assemble { out, .. } => retrieval_stage(&cfg, Stage::Assemble, &out),
        Command::Train { .. } => experiment(&cfg, ExperimentKind::Main),
        Command::Eval { .. } => eval(&cfg),
        Command::Ablate { grid: Grid::Rag, .. } => experiment(&cfg, ExperimentKind::AblateRag),
        Command::Ablate { grid: Grid::Fusion, .. } => experiment(&cfg, ExperimentKind::AblateFusion),
        Command::Sparsity { .. } => experiment(&cfg, ExperimentKind::Sparsity),
        Command::Importance { out, top, .. } => importance(&cfg, out, top),
        Command::Report { runs, .. } => report(&cfg, &runs),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::InvalidConfig { .. }) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
