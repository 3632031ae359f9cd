//! Disease-entity extraction from clinical notes with hallucination refinement.
//!
//! Each round asks an [`Extractor`] for entities and unions them into an
//! accumulator. The accumulator is then refined in three steps: entities not
//! present in the source text are dropped, entities the extractor does not
//! confirm as diseases are dropped, and near-duplicates under the embedder are
//! collapsed onto their first occurrence. Rounds repeat until the refined set
//! stops changing or the round budget runs out.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::embedding::Embedder;
use crate::entity::{normalize, Entity, EntitySet, Provenance};
use crate::error::{Error, Result};
use crate::kg::cosine;

pub const LLM_URL_ENV: &str = "REALM_LLM_URL";
pub const LLM_KEY_ENV: &str = "REALM_LLM_KEY";

/// One-shot disease NER instruction sent ahead of the note text.
pub const DEFAULT_EXTRACTION_PROMPT: &str = r#"[Instruction]

You are tasked with performing Named Entity Recognition (NER) specifically for diseases in
a given medical case description. Follow the instructions below:

1. Input: You will receive a medical case description in the [Input].
2. NER Task: Focus on extracting the names of diseases as the target entity.
3. Output: Provide the extracted disease names in JSON format.

Ensure that the JSON output only includes the names of diseases mentioned in the provided
[Input], excluding any additional content. The goal is to perform NER exclusively on
disease names within the given text.

Example:

[Input]

 1:19 pm abdomen ( supine and erect ) clip  reason : sbo medical condition : 63 year old
 woman with reason for this examination : sbo final report indication : 63-year-old woman
 with small bowel obstruction . findings : supine and upright abdominal radiographs are
 markedly limited due to the patient 's body habitus ...

[Answer]

{
    "entities": ["small bowel obstruction", "large bowel volvulus", ...]
}"#;

const CLASSIFY_PROMPT: &str = "[Instruction]\n\nFrom the entities listed in the [Input], return only those that are names of diseases, in JSON format as {\"entities\": [...]}. Do not add new entities.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    #[default]
    Lexicon,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    pub prompt_template: String,
    pub max_rounds: usize,
    pub dedupe_threshold: f64,
    pub extractor_kind: ExtractorKind,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            prompt_template: DEFAULT_EXTRACTION_PROMPT.to_string(),
            max_rounds: 3,
            dedupe_threshold: 0.9,
            extractor_kind: ExtractorKind::Lexicon,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_template.trim().is_empty() {
            return Err(Error::config("extraction.prompt_template", "must not be empty"));
        }
        if self.max_rounds < 1 {
            return Err(Error::config("extraction.max_rounds", "must be at least 1"));
        }
        if !(self.dedupe_threshold > 0.0 && self.dedupe_threshold <= 1.0) {
            return Err(Error::config("extraction.dedupe_threshold", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Source of candidate entities and of disease-type judgements.
pub trait Extractor: Send + Sync {
    /// Raw answer for `prompt` followed by `text`; expected to hold `{"entities": [...]}`.
    fn complete(&self, prompt: &str, text: &str) -> Result<String>;

    /// Whether each surface names a disease.
    fn is_disease(&self, surfaces: &[String]) -> Result<Vec<bool>>;
}

impl<E: Extractor + ?Sized> Extractor for std::sync::Arc<E> {
    fn complete(&self, prompt: &str, text: &str) -> Result<String> {
        (**self).complete(prompt, text)
    }
    fn is_disease(&self, surfaces: &[String]) -> Result<Vec<bool>> {
        (**self).is_disease(surfaces)
    }
}

impl<E: Extractor + ?Sized> Extractor for Box<E> {
    fn complete(&self, prompt: &str, text: &str) -> Result<String> {
        (**self).complete(prompt, text)
    }
    fn is_disease(&self, surfaces: &[String]) -> Result<Vec<bool>> {
        (**self).is_disease(surfaces)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub term: String,
    pub category: String,
}

impl LexiconEntry {
    pub fn new(term: &str, category: &str) -> Self {
        LexiconEntry {
            term: normalize(term),
            category: category.to_string(),
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Longest-match, case-insensitive, word-boundary dictionary scan.
///
/// Matches are reported left to right; a match consumes its span so shorter
/// overlapping terms are suppressed.
pub fn lexicon_extract(text: &str, lexicon: &[LexiconEntry]) -> Vec<(String, String)> {
    let hay: Vec<char> = normalize(text).chars().collect();
    let terms: Vec<(Vec<char>, &LexiconEntry)> = lexicon
        .iter()
        .filter(|e| !e.term.is_empty())
        .map(|e| (e.term.chars().collect(), e))
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < hay.len() {
        if i > 0 && is_word_char(hay[i - 1]) {
            i += 1;
            continue;
        }
        let best = terms
            .iter()
            .filter(|(t, _)| {
                let end = i + t.len();
                end <= hay.len() && hay[i..end] == t[..] && (end == hay.len() || !is_word_char(hay[end]))
            })
            .max_by_key(|(t, _)| t.len());
        match best {
            Some((t, e)) => {
                out.push((e.term.clone(), e.category.clone()));
                i += t.len();
            }
            None => i += 1,
        }
    }
    out
}

/// Deterministic offline extractor over a categorized lexicon.
///
/// Like a loosely prompted model it reports every lexicon hit, whatever its
/// category; the disease filter then consults the categories.
#[derive(Clone, Debug)]
pub struct LexiconExtractor {
    lexicon: Vec<LexiconEntry>,
}

impl LexiconExtractor {
    pub fn new(lexicon: Vec<LexiconEntry>) -> Self {
        LexiconExtractor { lexicon }
    }

    pub fn lexicon(&self) -> &[LexiconEntry] {
        &self.lexicon
    }
}

impl Extractor for LexiconExtractor {
    fn complete(&self, _prompt: &str, text: &str) -> Result<String> {
        let mut seen = EntitySet::new();
        for (term, _) in lexicon_extract(text, &self.lexicon) {
            seen.insert(Entity {
                surface: term,
                provenance: Provenance::Text { visit_index: None, round: 0 },
            });
        }
        Ok(json!({ "entities": seen.surfaces() }).to_string())
    }

    fn is_disease(&self, surfaces: &[String]) -> Result<Vec<bool>> {
        Ok(surfaces
            .iter()
            .map(|s| {
                let key = normalize(s);
                self.lexicon.iter().any(|e| e.term == key && e.category == "disease")
            })
            .collect())
    }
}

/// Pulls the entity list out of a model answer. Anything malformed yields `[]`.
pub fn parse_entities(answer: &str) -> Vec<String> {
    let value: Option<Value> = serde_json::from_str(answer.trim()).ok().or_else(|| {
        let start = answer.find('{')?;
        let end = answer.rfind('}')?;
        (start < end).then(|| serde_json::from_str(&answer[start..=end]).ok()).flatten()
    });
    value
        .as_ref()
        .and_then(|v| v.get("entities"))
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(Value::as_str)
                .map(str::to_string)
                .filter(|s| !s.trim().is_empty())
                .collect()
        })
        .unwrap_or_default()
}

/// Chat-style HTTP extractor.
///
/// Sends `{"model", "messages": [{"role": "user", "content"}]}`. The answer is
/// either a body carrying `entities` directly or a chat completion whose
/// `choices[0].message.content` holds the JSON.
#[derive(Debug)]
pub struct RemoteExtractor {
    url: String,
    key: Option<String>,
    model: String,
    agent: ureq::Agent,
    calls: AtomicUsize,
}

impl RemoteExtractor {
    pub fn new(url: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Result<Self> {
        let url = url.into();
        if url.is_empty() {
            return Err(Error::config("extraction.remote.url", format!("endpoint not configured (set {LLM_URL_ENV})")));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(true)
            .build()
            .into();
        Ok(RemoteExtractor {
            url,
            key,
            model: model.into(),
            agent,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_env(model: impl Into<String>) -> Result<Self> {
        Self::new(
            std::env::var(LLM_URL_ENV).unwrap_or_default(),
            std::env::var(LLM_KEY_ENV).ok(),
            model,
        )
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn chat(&self, content: String) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let transport = |message: String| Error::Transport {
            endpoint: self.url.clone(),
            message,
        };
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
        });
        let mut resp = req.send_json(body).map_err(|e| transport(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| transport(format!("unreadable response: {e}")))?;
        let Ok(v) = serde_json::from_str::<Value>(&text) else {
            return Ok(text);
        };
        if v.get("entities").is_some() {
            return Ok(v.to_string());
        }
        Ok(v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or(text))
    }
}

fn render_input(prompt: &str, text: &str) -> String {
    format!("{prompt}\n\n[Input]\n\n{text}\n\n[Answer]\n")
}

impl Extractor for RemoteExtractor {
    fn complete(&self, prompt: &str, text: &str) -> Result<String> {
        self.chat(render_input(prompt, text))
    }

    fn is_disease(&self, surfaces: &[String]) -> Result<Vec<bool>> {
        if surfaces.is_empty() {
            return Ok(Vec::new());
        }
        let listed = json!({ "entities": surfaces }).to_string();
        let kept: Vec<String> = parse_entities(&self.chat(render_input(CLASSIFY_PROMPT, &listed))?)
            .iter()
            .map(|s| normalize(s))
            .collect();
        Ok(surfaces.iter().map(|s| kept.contains(&normalize(s))).collect())
    }
}

/// One extractor call. Malformed or empty answers give an empty list.
pub fn extract_round(extractor: &dyn Extractor, cfg: &ExtractionConfig, text: &str, round: usize) -> Result<Vec<String>> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("cannot extract from empty text".into()));
    }
    let answer = extractor
        .complete(&cfg.prompt_template, text)
        .map_err(|e| Error::ExtractionRound { round, source: Box::new(e) })?;
    Ok(parse_entities(&answer))
}

/// Result of one refinement pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub kept: EntitySet,
    pub illegal: EntitySet,
}

/// Applies the substring, disease-type and semantic-duplicate filters in order.
pub fn refine(
    entities: &EntitySet,
    text: &str,
    extractor: &dyn Extractor,
    embedder: &dyn Embedder,
    cfg: &ExtractionConfig,
) -> Result<Refined> {
    let hay = normalize(text);
    let mut illegal = EntitySet::new();

    let mut grounded = EntitySet::new();
    for e in entities.iter() {
        if hay.contains(&normalize(&e.surface)) {
            grounded.insert(e.clone());
        } else {
            illegal.insert(e.clone());
        }
    }

    let surfaces = grounded.surfaces();
    let flags = if surfaces.is_empty() { Vec::new() } else { extractor.is_disease(&surfaces)? };
    if flags.len() != surfaces.len() {
        return Err(Error::InvalidInput("disease filter returned wrong number of flags".into()));
    }
    let mut typed = Vec::new();
    for (e, ok) in grounded.iter().zip(flags) {
        if ok {
            typed.push(e.clone());
        } else {
            illegal.insert(e.clone());
        }
    }

    let mut kept = EntitySet::new();
    if !typed.is_empty() {
        let refs: Vec<&str> = typed.iter().map(|e| e.surface.as_str()).collect();
        let vecs = embedder.embed_batch(&refs)?;
        let mut kept_vecs: Vec<&Vec<f32>> = Vec::new();
        for (e, v) in typed.iter().zip(&vecs) {
            let mut duplicate = false;
            for k in &kept_vecs {
                if cosine(k, v)? >= cfg.dedupe_threshold {
                    duplicate = true;
                    break;
                }
            }
            if duplicate {
                illegal.insert(e.clone());
            } else {
                kept.insert(e.clone());
                kept_vecs.push(v);
            }
        }
    }
    Ok(Refined { kept, illegal })
}

/// Outcome of the extract-refine loop.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopOutcome {
    pub entities: EntitySet,
    pub rounds: usize,
    pub converged: bool,
    /// Nothing survived; downstream uses the fallback bundle.
    pub no_entities: bool,
    /// Size of the unrefined accumulator after each round.
    pub accumulator_sizes: Vec<usize>,
}

/// Alternates extraction rounds and refinement until the refined set is stable.
pub fn extract_entities_loop(
    extractor: &dyn Extractor,
    embedder: &dyn Embedder,
    cfg: &ExtractionConfig,
    text: &str,
) -> Result<LoopOutcome> {
    cfg.validate()?;
    let mut accumulator = EntitySet::new();
    let mut current: Option<EntitySet> = None;
    let mut sizes = Vec::new();
    let mut converged = false;
    let mut rounds = 0;
    if !text.trim().is_empty() {
        for round in 1..=cfg.max_rounds {
            rounds = round;
            for surface in extract_round(extractor, cfg, text, round)? {
                accumulator.insert(Entity {
                    surface,
                    provenance: Provenance::Text { visit_index: None, round },
                });
            }
            sizes.push(accumulator.len());
            let refined = refine(&accumulator, text, extractor, embedder, cfg)?.kept;
            let stable = current.as_ref().is_some_and(|prev| prev.same_members(&refined));
            current = Some(refined);
            if stable {
                converged = true;
                break;
            }
        }
    }
    let entities = current.unwrap_or_default();
    Ok(LoopOutcome {
        no_entities: entities.is_empty(),
        entities,
        rounds,
        converged,
        accumulator_sizes: sizes,
    })
}
