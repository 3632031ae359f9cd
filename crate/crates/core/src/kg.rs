//! Knowledge-graph store, node-name index, entity matching and knowledge bundles.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{check_unit_norm, l2_normalize, Embedder};
use crate::entity::{EntitySet, Modality};
use crate::error::{Error, Result};

/// Default cosine threshold for accepting a node match.
pub const DEFAULT_ETA: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgNode {
    pub id: String,
    pub name: String,
    pub definition: String,
    pub description: String,
    #[serde(default)]
    pub category: String,
}

/// Disease nodes keyed by id, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeGraph {
    nodes: Vec<KgNode>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeGraph {
    pub fn new(nodes: Vec<KgNode>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.name.trim().is_empty() {
                return Err(Error::InvalidInput(format!("node `{}` has an empty name", n.id)));
            }
            if by_id.insert(n.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate node id `{}`", n.id)));
            }
        }
        Ok(KnowledgeGraph { nodes, by_id })
    }

    /// One JSON node per non-blank line.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            nodes.push(serde_json::from_str(line).map_err(|e| Error::json(format!("kg line {}", i + 1), e))?);
        }
        Self::new(nodes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        self.nodes
            .iter()
            .map(|n| serde_json::to_string(n).expect("node serializes") + "\n")
            .collect()
    }

    pub fn nodes(&self) -> &[KgNode] {
        &self.nodes
    }

    pub fn get(&self, id: &str) -> Option<&KgNode> {
        self.by_id.get(id).map(|&i| &self.nodes[i])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in u.iter().zip(v) {
        let (a, b): (f64, f64) = ((*a).into(), (*b).into());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Unit-norm embeddings of node names, row-aligned with `node_ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeIndex {
    node_ids: Vec<String>,
    dim: usize,
    embedder_id: String,
    /// Row-major `count x dim`.
    rows: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    #[serde(rename = "D")]
    dim: usize,
    count: usize,
    embedder_id: String,
    node_ids: Vec<String>,
}

/// Embeds every node name with `embedder`.
pub fn build_index(kg: &KnowledgeGraph, embedder: &dyn Embedder) -> Result<NodeIndex> {
    if kg.is_empty() {
        return Err(Error::InvalidInput("knowledge graph is empty".into()));
    }
    let names: Vec<&str> = kg.nodes().iter().map(|n| n.name.as_str()).collect();
    let vectors = match embedder.embed_batch(&names) {
        Ok(v) => v,
        Err(_) => {
            // Re-run one at a time to name the failing node.
            let mut out = Vec::with_capacity(names.len());
            for n in kg.nodes() {
                out.push(embedder.embed(&n.name).map_err(|e| Error::NodeEmbedding {
                    node: n.name.clone(),
                    source: Box::new(e),
                })?);
            }
            out
        }
    };
    let dim = embedder.dim();
    let mut rows = Vec::with_capacity(dim * kg.len());
    for (node, mut v) in kg.nodes().iter().zip(vectors) {
        if v.len() != dim {
            return Err(Error::NodeEmbedding {
                node: node.name.clone(),
                source: Box::new(Error::DimensionMismatch { expected: dim, actual: v.len() }),
            });
        }
        if !l2_normalize(&mut v) {
            return Err(Error::NodeEmbedding {
                node: node.name.clone(),
                source: Box::new(Error::UndefinedSimilarity),
            });
        }
        rows.extend_from_slice(&v);
    }
    Ok(NodeIndex {
        node_ids: kg.nodes().iter().map(|n| n.id.clone()).collect(),
        dim,
        embedder_id: embedder.id().to_string(),
        rows,
    })
}

impl NodeIndex {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Applies `f` to every row, for tests of transform invariance.
    pub fn map_rows(&self, f: impl Fn(&[f32]) -> Vec<f32>) -> NodeIndex {
        let rows = (0..self.len()).flat_map(|i| f(self.row(i))).collect();
        NodeIndex { rows, ..self.clone() }
    }

    /// JSON header line, newline, then little-endian `f32` rows.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = IndexHeader {
            dim: self.dim,
            count: self.len(),
            embedder_id: self.embedder_id.clone(),
            node_ids: self.node_ids.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend(self.rows.iter().flat_map(|x| x.to_le_bytes()));
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptFile { path: path.to_path_buf(), reason };
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| corrupt("missing header line".into()))?;
        let header: IndexHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let payload = &bytes[nl + 1..];
        if header.node_ids.len() != header.count || payload.len() != header.count * header.dim * 4 {
            return Err(corrupt(format!(
                "expected {} rows of dimension {}, found {} payload bytes",
                header.count,
                header.dim,
                payload.len()
            )));
        }
        let rows: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let index = NodeIndex {
            node_ids: header.node_ids,
            dim: header.dim,
            embedder_id: header.embedder_id,
            rows,
        };
        if (0..index.len()).any(|i| !check_unit_norm(index.row(i), 1e-5)) {
            return Err(corrupt("row is not unit norm".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Best node for a query vector: highest cosine, ties to the lowest id.
    pub fn best(&self, query: &[f32]) -> Result<Option<(usize, f64)>> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.len() {
            let theta = cosine(self.row(i), query)?;
            let better = match best {
                None => true,
                Some((bi, bt)) => theta > bt || (theta == bt && self.node_ids[i] < self.node_ids[bi]),
            };
            if better {
                best = Some((i, theta));
            }
        }
        Ok(best)
    }
}

/// An entity accepted against a node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeMatch {
    pub entity: String,
    pub node_id: String,
    pub similarity: f64,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidInput(format!("eta must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

/// Arg-max node for `entity` if its cosine reaches `eta`.
pub fn match_entity(entity: &str, index: &NodeIndex, embedder: &dyn Embedder, eta: f64) -> Result<Option<NodeMatch>> {
    check_eta(eta)?;
    let q = embedder.embed(entity)?;
    match_vector(entity, &q, index, eta)
}

/// [`match_entity`] with a precomputed query embedding.
pub fn match_vector(entity: &str, query: &[f32], index: &NodeIndex, eta: f64) -> Result<Option<NodeMatch>> {
    if index.is_empty() {
        return Err(Error::InvalidInput("node index is empty".into()));
    }
    if query.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            actual: query.len(),
        });
    }
    Ok(index.best(query)?.and_then(|(i, theta)| {
        (theta >= eta).then(|| NodeMatch {
            entity: entity.to_string(),
            node_id: index.node_ids[i].clone(),
            similarity: theta,
        })
    }))
}

/// Matches every entity in a set, embedding them in one batch.
pub fn match_entities(set: &EntitySet, index: &NodeIndex, embedder: &dyn Embedder, eta: f64) -> Result<Vec<NodeMatch>> {
    check_eta(eta)?;
    let surfaces = set.surfaces();
    if surfaces.is_empty() {
        return Ok(Vec::new());
    }
    let refs: Vec<&str> = surfaces.iter().map(String::as_str).collect();
    let vecs = embedder.embed_batch(&refs)?;
    let mut out = Vec::new();
    for (s, v) in surfaces.iter().zip(vecs) {
        if let Some(m) = match_vector(s, &v, index, eta)? {
            out.push(m);
        }
    }
    Ok(out)
}

/// Retrieved knowledge text for one patient and modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBundle {
    pub source_modality: Modality,
    pub matched: Vec<NodeMatch>,
    pub text: String,
    pub is_fallback: bool,
}

pub const BUNDLE_HEADER: &str = "You are an experienced doctor, and the patient's medical record includes the following disease entities during a visit. Below are descriptions related to these diseases. Please combine the severity of the patient's condition in the medical record and the severity of the disease to assess their health status.\n\nReferences:";

pub const FALLBACK_INSTRUCTION: &str = "You are an experienced doctor, please combine your background knowledge and the patient's records to judge the patient's health status.";

const BLOCK_SEP: &str = "\n\n";

/// One `[Disease] / [Definition] / [Description]` block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleBlock {
    pub name: String,
    pub definition: String,
    pub description: String,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl BundleBlock {
    pub fn from_node(n: &KgNode) -> Self {
        BundleBlock {
            name: one_line(&n.name),
            definition: one_line(&n.definition),
            description: one_line(&n.description),
        }
    }

    pub fn render(&self) -> String {
        format!(
            "[Disease] {}\n\n[Definition] {}\n\n[Description] {}",
            self.name, self.definition, self.description
        )
    }
}

/// Header plus one block per distinct matched node, or the fallback instruction.
pub fn assemble_bundle(matches: &[NodeMatch], kg: &KnowledgeGraph, modality: Modality) -> Result<KnowledgeBundle> {
    let mut seen = HashSet::new();
    let mut blocks = Vec::new();
    for m in matches {
        let node = kg.get(&m.node_id).ok_or_else(|| Error::UnknownNode(m.node_id.clone()))?;
        if seen.insert(node.id.as_str()) {
            blocks.push(BundleBlock::from_node(node).render());
        }
    }
    let (text, is_fallback) = if blocks.is_empty() {
        (FALLBACK_INSTRUCTION.to_string(), true)
    } else {
        (format!("{BUNDLE_HEADER}{BLOCK_SEP}{}", blocks.join(BLOCK_SEP)), false)
    };
    Ok(KnowledgeBundle {
        source_modality: modality,
        matched: matches.to_vec(),
        text,
        is_fallback,
    })
}

/// Splits bundle text back into header and blocks.
pub fn parse_bundle(text: &str) -> Option<(String, Vec<BundleBlock>)> {
    if text == FALLBACK_INSTRUCTION {
        return Some((text.to_string(), Vec::new()));
    }
    let rest = text.strip_prefix(BUNDLE_HEADER)?.strip_prefix(BLOCK_SEP)?;
    let mut blocks = Vec::new();
    for chunk in rest.split("\n\n[Disease] ") {
        let chunk = chunk.strip_prefix("[Disease] ").unwrap_or(chunk);
        let (name, rest) = chunk.split_once("\n\n[Definition] ")?;
        let (definition, description) = rest.split_once("\n\n[Description] ")?;
        blocks.push(BundleBlock {
            name: name.to_string(),
            definition: definition.to_string(),
            description: description.to_string(),
        });
    }
    Some((BUNDLE_HEADER.to_string(), blocks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TrigramEmbedder;

    fn node(id: &str, name: &str) -> KgNode {
        KgNode {
            id: id.into(),
            name: name.into(),
            definition: format!("{name} definition."),
            description: format!("{name} description."),
            category: "disease".into(),
        }
    }

    #[test]
    fn cosine_examples() {
        let x = [0.3f64, -1.2, 4.0];
        assert!((cosine(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0f64, 1.0, 0.0], &[1.0, 0.0, 1.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(cosine(&[0.0f64, 0.0], &[1.0, 0.0]), Err(Error::UndefinedSimilarity)));
        assert!(cosine(&[1.0f64], &[1.0, 0.0]).is_err());
        let (a, b) = ([0.2f64, 0.7, -0.1], [1.5f64, -0.3, 0.9]);
        assert_eq!(cosine(&a, &b).unwrap(), cosine(&b, &a).unwrap());
    }

    #[test]
    fn exact_name_matches_with_unit_similarity() {
        let kg = KnowledgeGraph::new(vec![node("N1", "sepsis"), node("N2", "fracture"), node("N3", "asthma")]).unwrap();
        let emb = TrigramEmbedder::new(64).unwrap();
        let idx = build_index(&kg, &emb).unwrap();
        let m = match_entity("sepsis", &idx, &emb, 0.85).unwrap().unwrap();
        assert_eq!(m.node_id, "N1");
        assert!((m.similarity - 1.0).abs() < 1e-6);
        assert!(match_entity("zzzz qqqq", &idx, &emb, 0.85).unwrap().is_none());
        assert!(match_entity("sepsis", &idx, &emb, 1.5).is_err());
        assert!(match_entity("sepsis", &idx, &emb, 0.0).is_err());
    }

    #[test]
    fn eta_just_above_max_rejects() {
        let kg = KnowledgeGraph::new(vec![node("N1", "sepsis"), node("N2", "fracture")]).unwrap();
        let emb = TrigramEmbedder::new(64).unwrap();
        let idx = build_index(&kg, &emb).unwrap();
        let m = match_entity("sepsis syndrome", &idx, &emb, 0.1).unwrap().unwrap();
        let above = (m.similarity + 1e-9).min(1.0);
        assert!(match_entity("sepsis syndrome", &idx, &emb, above).unwrap().is_none());
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let kg = KnowledgeGraph::new(vec![node("N9", "sepsis"), node("N2", "sepsis")]).unwrap();
        let emb = TrigramEmbedder::new(32).unwrap();
        let idx = build_index(&kg, &emb).unwrap();
        assert_eq!(match_entity("sepsis", &idx, &emb, 0.5).unwrap().unwrap().node_id, "N2");
    }

    #[test]
    fn index_round_trip_is_bit_exact() {
        let kg = KnowledgeGraph::new(vec![node("N1", "sepsis")]).unwrap();
        let emb = TrigramEmbedder::new(16).unwrap();
        let idx = build_index(&kg, &emb).unwrap();
        assert_eq!(idx.len(), 1);
        assert!(check_unit_norm(idx.row(0), 1e-6));
        assert_eq!(build_index(&kg, &emb).unwrap(), idx);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nodes.idx");
        idx.save(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let back = NodeIndex::load(&p).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.to_bytes(), bytes);
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(NodeIndex::load(&p), Err(Error::CorruptFile { .. })));
    }

    #[test]
    fn duplicate_ids_and_empty_names_rejected() {
        assert!(KnowledgeGraph::new(vec![node("A", "x"), node("A", "y")]).is_err());
        assert!(KnowledgeGraph::new(vec![node("A", " ")]).is_err());
        let kg = KnowledgeGraph::new(vec![]).unwrap();
        assert!(build_index(&kg, &TrigramEmbedder::new(8).unwrap()).is_err());
    }

    #[test]
    fn bundle_layout_two_nodes() {
        let kg = KnowledgeGraph::new(vec![node("N1", "acromegaly"), node("N2", "pulmonary edema")]).unwrap();
        let matches = vec![
            NodeMatch { entity: "pulmonary edema".into(), node_id: "N2".into(), similarity: 1.0 },
            NodeMatch { entity: "acromegaly".into(), node_id: "N1".into(), similarity: 0.9 },
        ];
        let b = assemble_bundle(&matches, &kg, Modality::Text).unwrap();
        assert!(!b.is_fallback);
        let expected = format!(
            "{BUNDLE_HEADER}\n\n[Disease] pulmonary edema\n\n[Definition] pulmonary edema definition.\n\n[Description] pulmonary edema description.\n\n[Disease] acromegaly\n\n[Definition] acromegaly definition.\n\n[Description] acromegaly description."
        );
        assert_eq!(b.text, expected);
        assert_eq!(assemble_bundle(&matches, &kg, Modality::Text).unwrap().text, b.text);
        let (header, blocks) = parse_bundle(&b.text).unwrap();
        assert_eq!(header, BUNDLE_HEADER);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0], BundleBlock::from_node(kg.get("N2").unwrap()));
    }

    #[test]
    fn empty_matches_fall_back() {
        let kg = KnowledgeGraph::new(vec![node("N1", "a b c")]).unwrap();
        let b = assemble_bundle(&[], &kg, Modality::Ts).unwrap();
        assert!(b.is_fallback);
        assert_eq!(b.text, FALLBACK_INSTRUCTION);
        assert_eq!(parse_bundle(&b.text).unwrap().1, vec![]);
        let bad = vec![NodeMatch { entity: "x".into(), node_id: "nope".into(), similarity: 1.0 }];
        assert!(matches!(assemble_bundle(&bad, &kg, Modality::Ts), Err(Error::UnknownNode(_))));
    }
}
