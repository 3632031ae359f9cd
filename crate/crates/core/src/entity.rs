//! Extracted entity sets shared by the time-series and text pipelines.

use serde::{Deserialize, Serialize};

/// Input modality an entity or bundle came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ts,
    Text,
}

/// Whether a time-series value lies above or below its reference range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    High,
    Low,
}

/// The most extreme observed cell of an abnormal feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsAnomaly {
    pub feature_name: String,
    pub visit_index: usize,
    pub value: f64,
    pub zscore: f64,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", rename_all = "lowercase")]
pub enum Provenance {
    Ts(TsAnomaly),
    Text {
        visit_index: Option<usize>,
        round: usize,
    },
}

impl Provenance {
    pub fn modality(&self) -> Modality {
        match self {
            Provenance::Ts(_) => Modality::Ts,
            Provenance::Text { .. } => Modality::Text,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    pub provenance: Provenance,
}

/// Lowercases and collapses runs of whitespace.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Insertion-ordered entities, unique by normalized surface.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntitySet {
    entries: Vec<Entity>,
}

impl EntitySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entity unless its normalized surface is already present.
    pub fn insert(&mut self, entity: Entity) -> bool {
        let key = normalize(&entity.surface);
        if key.is_empty() || self.contains(&key) {
            return false;
        }
        self.entries.push(entity);
        true
    }

    pub fn contains(&self, surface: &str) -> bool {
        let key = normalize(surface);
        self.entries.iter().any(|e| normalize(&e.surface) == key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entity> {
        self.entries.iter()
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.surface.clone()).collect()
    }

    pub fn retain(&mut self, f: impl FnMut(&Entity) -> bool) {
        self.entries.retain(f);
    }

    /// Entities of `self` whose normalized surface is absent from `other`.
    pub fn difference(&self, other: &EntitySet) -> EntitySet {
        EntitySet {
            entries: self
                .entries
                .iter()
                .filter(|e| !other.contains(&e.surface))
                .cloned()
                .collect(),
        }
    }

    /// Same members irrespective of order and provenance.
    pub fn same_members(&self, other: &EntitySet) -> bool {
        self.len() == other.len() && self.entries.iter().all(|e| other.contains(&e.surface))
    }
}

impl FromIterator<Entity> for EntitySet {
    fn from_iter<I: IntoIterator<Item = Entity>>(iter: I) -> Self {
        let mut set = EntitySet::new();
        for e in iter {
            set.insert(e);
        }
        set
    }
}
