//! Run configuration: JSON schema, dotted-path overrides, validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ehr::CohortConfig;
use crate::embedding::{RemoteEmbedderConfig, DEFAULT_TRIGRAM_DIM};
use crate::error::{Error, Result};
use crate::fusion::ModelConfig;
use crate::importance::ImportanceConfig;
use crate::metrics::DEFAULT_BOOTSTRAP;
use crate::par::Execution;
use crate::pipeline::RagSettings;
use crate::text_rag::{ExtractionConfig, ExtractorKind, DEFAULT_EXTRACTION_PROMPT};
use crate::train::TrainConfig;
use crate::ts_rag::DEFAULT_TS_THRESHOLD;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory; when unset a cohort is generated from `generate`.
    pub path: Option<PathBuf>,
    /// `generate.seed` always follows the root seed.
    pub generate: CohortConfig,
    /// Train, validation, test fractions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            generate: CohortConfig::default(),
            split: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgConfig {
    /// JSONL node file; the bundled 50-node graph when unset.
    pub path: Option<PathBuf>,
    /// Prebuilt node index; rebuilt in memory when unset.
    pub index_path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub eps: f64,
    pub eta: f64,
    pub dedupe: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            eps: DEFAULT_TS_THRESHOLD,
            eta: crate::kg::DEFAULT_ETA,
            dedupe: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Trigram,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    /// Trigram dimension; the remote dimension lives in `remote.dim`.
    pub dim: usize,
    pub cache_dir: Option<PathBuf>,
    pub remote: RemoteEmbedderConfig,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Trigram,
            dim: DEFAULT_TRIGRAM_DIM,
            cache_dir: None,
            remote: RemoteEmbedderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    pub max_rounds: usize,
    pub prompt_template: String,
    /// Chat model name sent to the remote extractor.
    pub model: String,
    /// Lexicon JSON for the local extractor; the bundled lexicon when unset.
    pub lexicon_path: Option<PathBuf>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            kind: ExtractorKind::Lexicon,
            max_rounds: 3,
            prompt_template: DEFAULT_EXTRACTION_PROMPT.to_string(),
            model: "default".into(),
            lexicon_path: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub bootstrap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { bootstrap: DEFAULT_BOOTSTRAP }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub drop_fractions: Vec<f64>,
    pub execution: Execution,
    pub importance: ImportanceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            drop_fractions: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            execution: Execution::default(),
            importance: ImportanceConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub name: String,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub kg: KgConfig,
    pub thresholds: Thresholds,
    pub embedder: EmbedderConfig,
    pub extractor: ExtractorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            name: "realm".into(),
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            kg: KgConfig::default(),
            thresholds: Thresholds::default(),
            embedder: EmbedderConfig::default(),
            extractor: ExtractorConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return Err(Error::config("name", "must be a plain directory name"));
        }
        if self.data.path.is_none() {
            self.data.generate.validate()?;
        }
        let s = self.data.split;
        if s.iter().any(|&r| !(r > 0.0)) || ((s.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::config("data.split", "fractions must be positive and sum to 1"));
        }
        let t = &self.thresholds;
        if !(t.eps.is_finite() && t.eps > 0.0) {
            return Err(Error::config("thresholds.eps", "must be finite and positive"));
        }
        if !(t.eta > 0.0 && t.eta <= 1.0) {
            return Err(Error::config("thresholds.eta", format!("must lie in (0, 1], got {}", t.eta)));
        }
        if !(t.dedupe > 0.0 && t.dedupe <= 1.0) {
            return Err(Error::config("thresholds.dedupe", "must lie in (0, 1]"));
        }
        match self.embedder.kind {
            EmbedderKind::Trigram if self.embedder.dim == 0 => {
                return Err(Error::config("embedder.dim", "must be positive"));
            }
            EmbedderKind::Remote if self.embedder.remote.dim == 0 || self.embedder.remote.batch_size == 0 => {
                return Err(Error::config("embedder.remote", "dim and batch_size must be positive"));
            }
            _ => {}
        }
        self.extraction().validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.bootstrap == 0 {
            return Err(Error::config("eval.bootstrap", "must be at least 1"));
        }
        let fr = &self.experiment.drop_fractions;
        if fr.is_empty() || fr.iter().any(|f| !(0.0..1.0).contains(f)) {
            return Err(Error::config("experiment.drop_fractions", "need at least one fraction, each in [0, 1)"));
        }
        Ok(())
    }

    pub fn extraction(&self) -> ExtractionConfig {
        ExtractionConfig {
            prompt_template: self.extractor.prompt_template.clone(),
            max_rounds: self.extractor.max_rounds,
            dedupe_threshold: self.thresholds.dedupe,
            extractor_kind: self.extractor.kind,
        }
    }

    pub fn rag_settings(&self) -> RagSettings {
        RagSettings {
            eps: self.thresholds.eps,
            eta: self.thresholds.eta,
            extraction: self.extraction(),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Parses `a.b.c=value`. The value is read as JSON when possible, else as a string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (path, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must look like key.path=value"))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::config(s, "empty key in override"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.to_string(), value))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            if cur.is_null() {
                *cur = Value::Object(Default::default());
            } else {
                return Err(Error::config(parts[..i].join("."), "is not an object"));
            }
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Object(Default::default()));
    }
    Ok(())
}

/// Resolves a config from an optional JSON file plus overrides (applied in order, last wins).
pub fn resolve_config(text: Option<&str>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut root = match text.map(str::trim) {
        None | Some("") => Value::Object(Default::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| Error::config("<file>", e.to_string()))?,
    };
    if !root.is_object() {
        return Err(Error::config("<file>", "top level must be a JSON object"));
    }
    for (path, value) in overrides {
        set_path(&mut root, path, value.clone())?;
    }
    let mut cfg: RunConfig = serde_path_to_error::deserialize(root).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.data.generate.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?),
        None => None,
    };
    resolve_config(text.as_deref(), overrides)
}
