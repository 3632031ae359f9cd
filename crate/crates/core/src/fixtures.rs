//! Built-in feature schema, miniature knowledge graph and extraction lexicon.

use serde::Deserialize;

use crate::ehr::FeatureSpec;
use crate::kg::{KgNode, KnowledgeGraph};
use crate::text_rag::LexiconEntry;

const MINI_KG: &str = include_str!("../fixtures/mini_kg.jsonl");
const LEXICON: &str = include_str!("../fixtures/lexicon.json");

/// 17 lab columns followed by the two demographic columns.
pub fn default_features() -> Vec<FeatureSpec> {
    vec![
        FeatureSpec::numeric("blood urea nitrogen", 7.0, 20.0, "mg/dL"),
        FeatureSpec::numeric("creatinine", 0.6, 1.3, "mg/dL"),
        FeatureSpec::numeric("potassium", 3.5, 5.0, "mmol/L"),
        FeatureSpec::numeric("sodium", 135.0, 145.0, "mmol/L"),
        FeatureSpec::numeric("glucose", 70.0, 110.0, "mg/dL"),
        FeatureSpec::numeric("heart rate", 60.0, 100.0, "bpm"),
        FeatureSpec::numeric("systolic blood pressure", 90.0, 140.0, "mmHg"),
        FeatureSpec::numeric("diastolic blood pressure", 60.0, 90.0, "mmHg"),
        FeatureSpec::numeric("respiratory rate", 12.0, 20.0, "breaths/min"),
        FeatureSpec::numeric("temperature", 36.1, 37.8, "C"),
        FeatureSpec::numeric("oxygen saturation", 94.0, 100.0, "%"),
        FeatureSpec::numeric("white blood cell count", 4.5, 11.0, "K/uL"),
        FeatureSpec::numeric("hemoglobin", 12.0, 17.5, "g/dL"),
        FeatureSpec::numeric("platelet count", 150.0, 400.0, "K/uL"),
        FeatureSpec::numeric("lactate", 0.5, 2.2, "mmol/L"),
        FeatureSpec::numeric("ph", 7.35, 7.45, ""),
        FeatureSpec::categorical("capillary refill rate", 0.0, 1.0),
        FeatureSpec::numeric("age", 18.0, 90.0, "years"),
        FeatureSpec::categorical("gender", 0.0, 1.0),
    ]
}

/// Direction in which the generator plants anomalies: `Some(true)` = high.
pub fn anomaly_direction(feature: &str) -> Option<bool> {
    match feature {
        "blood urea nitrogen" | "creatinine" | "potassium" | "glucose" | "heart rate"
        | "respiratory rate" | "temperature" | "white blood cell count" | "lactate" => Some(true),
        "sodium" | "systolic blood pressure" | "diastolic blood pressure" | "oxygen saturation"
        | "hemoglobin" | "platelet count" | "ph" => Some(false),
        _ => None,
    }
}

/// Disease and drug vocabulary used to write synthetic notes.
pub struct NoteVocabulary {
    /// Diseases whose mention raises the planted risk.
    pub dangerous: Vec<&'static str>,
    /// Diseases mentioned without effect on the label.
    pub benign: Vec<&'static str>,
    pub drugs: Vec<&'static str>,
}

pub fn note_vocabulary() -> NoteVocabulary {
    NoteVocabulary {
        dangerous: vec![
            "sepsis",
            "septic shock",
            "acute respiratory distress syndrome",
            "cardiogenic shock",
            "pulmonary embolism",
            "acute myocardial infarction",
            "intracranial hemorrhage",
            "acute kidney injury",
            "acute liver failure",
            "diabetic ketoacidosis",
        ],
        benign: vec![
            "hypertension",
            "hyperlipidemia",
            "osteoarthritis",
            "gastroesophageal reflux disease",
            "hypothyroidism",
            "allergic rhinitis",
            "migraine",
            "atrial fibrillation",
            "osteoporosis",
            "type 2 diabetes mellitus",
            "benign prostatic hyperplasia",
            "chronic obstructive pulmonary disease",
        ],
        drugs: vec![
            "furosemide",
            "vancomycin",
            "piperacillin",
            "metoprolol",
            "heparin",
            "insulin",
            "acetaminophen",
            "lisinopril",
            "atorvastatin",
        ],
    }
}

/// The shipped 50-node disease graph.
pub fn mini_kg() -> KnowledgeGraph {
    KnowledgeGraph::from_jsonl(MINI_KG).expect("built-in knowledge graph parses")
}

pub fn mini_kg_nodes() -> Vec<KgNode> {
    mini_kg().nodes().to_vec()
}

pub fn mini_kg_jsonl() -> &'static str {
    MINI_KG
}

#[derive(Deserialize)]
struct RawEntry {
    term: String,
    category: String,
}

/// Terms with categories (disease, drug, anatomy, procedure).
pub fn lexicon() -> Vec<LexiconEntry> {
    let raw: Vec<RawEntry> = serde_json::from_str(LEXICON).expect("built-in lexicon parses");
    raw.into_iter()
        .map(|e| LexiconEntry::new(&e.term, &e.category))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_consistent() {
        let kg = mini_kg();
        assert_eq!(kg.len(), 50);
        let lex = lexicon();
        let vocab = note_vocabulary();
        for d in vocab.dangerous.iter().chain(&vocab.benign) {
            assert!(kg.nodes().iter().any(|n| n.name == *d), "{d} missing from KG");
            assert!(lex.iter().any(|e| e.term == *d && e.category == "disease"));
        }
        for d in &vocab.drugs {
            assert!(lex.iter().any(|e| e.term == *d && e.category == "drug"));
        }
        for f in default_features() {
            if anomaly_direction(&f.name).is_some() {
                assert!(kg.nodes().iter().any(|n| n.name == f.name), "{} missing", f.name);
            }
        }
    }
}
