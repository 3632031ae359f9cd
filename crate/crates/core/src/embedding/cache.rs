use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::{check_unit_norm, l2_normalize, Embedder};
use crate::error::{Error, Result};

type Key = (String, [u8; 32]);

/// Content-addressed vector store keyed by `(embedder id, SHA-256 of text)`.
///
/// Entries live in memory and, when a root directory is set, under
/// `<root>/<embedder_id>/<first-2-hex>/<hash>.vec` as little-endian `f32`.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    root: Option<PathBuf>,
    mem: Mutex<HashMap<Key, Arc<Vec<f32>>>>,
}

pub fn content_hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

/// Encodes a vector as contiguous little-endian `f32`.
pub fn encode_vector(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn decode_vector(bytes: &[u8]) -> Option<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(root: impl Into<PathBuf>) -> Self {
        EmbeddingCache {
            root: Some(root.into()),
            mem: Mutex::default(),
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn entry_path(&self, embedder_id: &str, text: &str) -> Option<PathBuf> {
        let h = hex(&content_hash(text));
        self.root
            .as_ref()
            .map(|r| r.join(sanitize(embedder_id)).join(&h[..2]).join(format!("{h}.vec")))
    }

    /// Looks up a vector. A present but unreadable entry is an error.
    pub fn get(&self, embedder_id: &str, text: &str, dim: usize) -> Result<Option<Vec<f32>>> {
        let key = (embedder_id.to_string(), content_hash(text));
        if let Some(v) = self.mem.lock().expect("cache lock").get(&key) {
            return Ok(Some(v.as_ref().clone()));
        }
        let Some(path) = self.entry_path(embedder_id, text) else {
            return Ok(None);
        };
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
        };
        let corrupt = |reason: String| Error::CorruptCache { path: path.clone(), reason };
        let v = decode_vector(&bytes).ok_or_else(|| corrupt(format!("length {} is not a multiple of 4", bytes.len())))?;
        if v.len() != dim {
            return Err(corrupt(format!("holds {} values, expected {dim}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(corrupt("non-finite value".into()));
        }
        if !check_unit_norm(&v, 1e-4) {
            return Err(corrupt("vector is not unit norm".into()));
        }
        self.mem.lock().expect("cache lock").insert(key, Arc::new(v.clone()));
        Ok(Some(v))
    }

    /// Stores a vector; disk writes go through a temp file and rename.
    pub fn put(&self, embedder_id: &str, text: &str, v: &[f32]) -> Result<()> {
        if let Some(path) = self.entry_path(embedder_id, text) {
            let dir = path.parent().expect("entry has parent");
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
            f.write_all(&encode_vector(v))
                .and_then(|_| f.sync_all())
                .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(format!("renaming {}", tmp.display()), e))?;
        }
        self.mem
            .lock()
            .expect("cache lock")
            .insert((embedder_id.to_string(), content_hash(text)), Arc::new(v.to_vec()));
        Ok(())
    }

    pub fn len_in_memory(&self) -> usize {
        self.mem.lock().expect("cache lock").len()
    }
}

/// Wraps an embedder with a cache and enforces the unit-norm contract.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Arc<EmbeddingCache>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E, cache: Arc<EmbeddingCache>) -> Self {
        CachedEmbedder { inner, cache }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let id = self.inner.id();
        let dim = self.inner.dim();
        let mut out: Vec<Option<Vec<f32>>> = Vec::with_capacity(texts.len());
        let mut missing: Vec<usize> = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let hit = self.cache.get(id, t, dim)?;
            if hit.is_none() {
                missing.push(i);
            }
            out.push(hit);
        }
        if !missing.is_empty() {
            let batch: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let mut fresh = self.inner.embed_batch(&batch)?;
            if fresh.len() != batch.len() {
                return Err(Error::InvalidInput(format!(
                    "embedder `{id}` returned {} vectors for {} texts",
                    fresh.len(),
                    batch.len()
                )));
            }
            for v in fresh.iter_mut() {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
                }
                if !check_unit_norm(v, 1e-6) && !l2_normalize(v) {
                    return Err(Error::UndefinedSimilarity);
                }
            }
            // Write only once the whole batch succeeded.
            for (&i, v) in missing.iter().zip(fresh) {
                self.cache.put(id, texts[i], &v)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}
