//! Text embedders: a deterministic trigram-hashing reference, a remote client
//! and a content-addressed disk cache.

mod cache;
mod remote;

use std::sync::Arc;

pub use cache::{CachedEmbedder, EmbeddingCache};
pub use remote::{RemoteEmbedder, RemoteEmbedderConfig};

use crate::error::{Error, Result};

/// Maps text to a unit-norm vector of fixed dimension.
///
/// Implementations must be deterministic for a given `id`.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>>;

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| Error::InvalidInput("embedder returned no vectors".into()))
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        (**self).embed_batch(texts)
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        (**self).embed_batch(texts)
    }
}

pub const DEFAULT_TRIGRAM_DIM: usize = 256;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// L2-normalizes in place. Returns `false` for an all-zero vector.
pub fn l2_normalize(v: &mut [f32]) -> bool {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    true
}

/// Hashed character-trigram counts, L2-normalized.
///
/// Text is lowercased and whitespace-collapsed. Strings shorter than three
/// characters map to the first basis vector.
pub fn trigram_embed(text: &str, dim: usize) -> Vec<f32> {
    assert!(dim >= 8, "trigram embedding dimension must be at least 8");
    let collapsed = crate::entity::normalize(text);
    let chars: Vec<char> = collapsed.chars().collect();
    let mut counts = vec![0f64; dim];
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut n = 0;
        for c in w {
            n += c.encode_utf8(&mut buf[n..]).len();
        }
        counts[(fnv1a64(&buf[..n]) % dim as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e0 = vec![0f32; dim];
        e0[0] = 1.0;
        return e0;
    }
    counts.iter().map(|c| (c / norm) as f32).collect()
}

/// Offline reference embedder backed by [`trigram_embed`].
#[derive(Clone, Debug)]
pub struct TrigramEmbedder {
    dim: usize,
    id: String,
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 8 {
            return Err(Error::config("embedding.dim", "trigram embedder needs dim >= 8"));
        }
        Ok(TrigramEmbedder {
            dim,
            id: format!("trigram-fnv1a-d{dim}"),
        })
    }
}

impl Embedder for TrigramEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| trigram_embed(t, self.dim)).collect())
    }
}

/// Checks the unit-norm contract at a module boundary.
pub fn check_unit_norm(v: &[f32], tol: f64) -> bool {
    let n = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    (n - 1.0).abs() <= tol
}
