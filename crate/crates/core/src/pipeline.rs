//! Per-patient preparation: standardized labs, note embeddings, and one
//! retrieved knowledge bundle per modality.

use serde::{Deserialize, Serialize};

use crate::ehr::{Dataset, FeatureSpec, PatientRecord, Task};
use crate::embedding::Embedder;
use crate::encoders::note_matrix;
use crate::entity::{normalize, EntitySet, Modality, Provenance};
use crate::error::{Error, Result};
use crate::fusion::{InputDims, ModelInput};
use crate::kg::{assemble_bundle, match_entities, KnowledgeBundle, KnowledgeGraph, NodeIndex};
use crate::nn::Mat;
use crate::par::{self, Execution};
use crate::text_rag::{extract_entities_loop, ExtractionConfig, Extractor};
use crate::ts_rag::{extract_ts_entities, reference_stats, zscore};

/// Shared retrieval backends.
#[derive(Clone, Copy)]
pub struct Resources<'a> {
    pub kg: &'a KnowledgeGraph,
    pub index: &'a NodeIndex,
    pub embedder: &'a dyn Embedder,
    pub extractor: &'a dyn Extractor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RagSettings {
    pub eps: f64,
    pub eta: f64,
    pub extraction: ExtractionConfig,
}

/// Intermediate retrieval results kept for inspection and reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientArtifacts {
    pub id: String,
    pub ts_entities: EntitySet,
    pub text_entities: EntitySet,
    pub extraction_rounds: usize,
    pub ts_bundle: KnowledgeBundle,
    pub text_bundle: KnowledgeBundle,
}

#[derive(Clone, Debug)]
pub struct PreparedPatient {
    pub input: ModelInput,
    pub label_mortality: u8,
    pub label_readmission: u8,
    pub artifacts: PatientArtifacts,
}

impl PreparedPatient {
    pub fn label(&self, task: Task) -> u8 {
        match task {
            Task::Mortality => self.label_mortality,
            Task::Readmission => self.label_readmission,
        }
    }
}

/// Imputed lab matrix expressed in reference-range z-scores.
pub fn standardize(rec: &PatientRecord, features: &[FeatureSpec]) -> Result<Mat> {
    let mut m = rec.imputed(features);
    for (j, spec) in features.iter().enumerate() {
        let (mean, std) = reference_stats(spec)?;
        for v in m.column_mut(j) {
            *v = zscore(*v, mean, std)?;
        }
    }
    Ok(m)
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Runs the extract-refine loop over all of a patient's notes and tags each
/// entity with the first visit whose note mentions it.
pub fn text_entities(rec: &PatientRecord, res: &Resources, cfg: &ExtractionConfig) -> Result<(EntitySet, usize)> {
    let notes: Vec<&str> = rec.notes.iter().flatten().map(String::as_str).collect();
    let joined = notes.join("\n");
    let outcome = extract_entities_loop(res.extractor, res.embedder, cfg, &joined)?;
    let lowered: Vec<Option<String>> = rec.notes.iter().map(|n| n.as_deref().map(normalize)).collect();
    let tagged = outcome
        .entities
        .iter()
        .map(|e| {
            let key = normalize(&e.surface);
            let visit = lowered.iter().position(|n| n.as_deref().is_some_and(|n| n.contains(&key)));
            let round = match e.provenance {
                Provenance::Text { round, .. } => round,
                _ => 0,
            };
            crate::entity::Entity {
                surface: e.surface.clone(),
                provenance: Provenance::Text { visit_index: visit, round },
            }
        })
        .collect();
    Ok((tagged, outcome.rounds))
}

pub fn prepare_patient(
    rec: &PatientRecord,
    features: &[FeatureSpec],
    res: &Resources,
    settings: &RagSettings,
) -> Result<PreparedPatient> {
    rec.validate(features.len())?;
    let ts = standardize(rec, features)?;
    let dim = res.embedder.dim();

    let present: Vec<&str> = rec.notes.iter().flatten().map(String::as_str).collect();
    let mut vecs = if present.is_empty() { Vec::new() } else { res.embedder.embed_batch(&present)? }.into_iter();
    let per_visit: Vec<Option<Vec<f64>>> = rec
        .notes
        .iter()
        .map(|n| n.as_ref().and_then(|_| vecs.next()).map(|v| to_f64(&v)))
        .collect();
    let (notes, note_present) = note_matrix(&per_visit, dim)?;

    let ts_entities = extract_ts_entities(rec, features, settings.eps)?;
    let ts_matches = match_entities(&ts_entities, res.index, res.embedder, settings.eta)?;
    let ts_bundle = assemble_bundle(&ts_matches, res.kg, Modality::Ts)?;

    let (text_set, rounds) = text_entities(rec, res, &settings.extraction)?;
    let text_matches = match_entities(&text_set, res.index, res.embedder, settings.eta)?;
    let text_bundle = assemble_bundle(&text_matches, res.kg, Modality::Text)?;

    let bundle_vecs = res.embedder.embed_batch(&[&ts_bundle.text, &text_bundle.text])?;
    let input = ModelInput {
        ts,
        times: rec.times.clone(),
        notes,
        note_present,
        rag_ts: to_f64(&bundle_vecs[0]),
        rag_text: to_f64(&bundle_vecs[1]),
    };
    Ok(PreparedPatient {
        input,
        label_mortality: rec.label_mortality,
        label_readmission: rec.label_readmission,
        artifacts: PatientArtifacts {
            id: rec.id.clone(),
            ts_entities,
            text_entities: text_set,
            extraction_rounds: rounds,
            ts_bundle,
            text_bundle,
        },
    })
}

pub fn prepare_dataset(ds: &Dataset, res: &Resources, settings: &RagSettings, exec: Execution) -> Result<Vec<PreparedPatient>> {
    if res.index.embedder_id() != res.embedder.id() {
        return Err(Error::InvalidInput(format!(
            "node index was built with embedder {} but {} is configured",
            res.index.embedder_id(),
            res.embedder.id()
        )));
    }
    par::map(exec, &ds.patients, |rec| prepare_patient(rec, &ds.features, res, settings))
        .into_iter()
        .collect()
}

pub fn input_dims(ds: &Dataset, embedder: &dyn Embedder) -> InputDims {
    InputDims {
        n_features: ds.features.len(),
        text_dim: embedder.dim(),
    }
}

/// Splits prepared patients into model inputs and labels for `task`.
pub fn inputs_and_labels(patients: &[PreparedPatient], task: Task) -> (Vec<ModelInput>, Vec<u8>) {
    patients.iter().map(|p| (p.input.clone(), p.label(task))).unzip()
}
