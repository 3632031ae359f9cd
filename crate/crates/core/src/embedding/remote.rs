use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{l2_normalize, Embedder};
use crate::error::{Error, Result};

pub const EMBED_URL_ENV: &str = "REALM_EMBED_URL";
pub const EMBED_KEY_ENV: &str = "REALM_EMBED_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteEmbedderConfig {
    pub url: String,
    #[serde(skip_serializing)]
    pub key: Option<String>,
    /// Identifies model and pooling; part of every cache key.
    pub id: String,
    pub dim: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        RemoteEmbedderConfig {
            url: String::new(),
            key: None,
            id: "remote".into(),
            dim: 1024,
            batch_size: 32,
            max_in_flight: 4,
            timeout_secs: 60,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.free.lock().expect("gate lock");
        while *n == 0 {
            n = self.cv.wait(n).expect("gate lock");
        }
        *n -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Client for an HTTP embedding endpoint.
///
/// Request body: `{"model": id, "input": [text, ...]}`. The response may be
/// `{"data": [{"embedding": [...]}, ...]}` or `{"embeddings": [[...], ...]}`.
#[derive(Debug)]
pub struct RemoteEmbedder {
    cfg: RemoteEmbedderConfig,
    agent: ureq::Agent,
    gate: Gate,
    calls: AtomicUsize,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteEmbedderConfig) -> Result<Self> {
        if cfg.url.is_empty() {
            return Err(Error::config("embedding.remote.url", format!("endpoint not configured (set {EMBED_URL_ENV})")));
        }
        if cfg.dim == 0 || cfg.batch_size == 0 || cfg.max_in_flight == 0 {
            return Err(Error::config("embedding.remote", "dim, batch_size and max_in_flight must be positive"));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .into();
        Ok(RemoteEmbedder {
            gate: Gate {
                free: Mutex::new(cfg.max_in_flight),
                cv: Condvar::new(),
            },
            cfg,
            agent,
            calls: AtomicUsize::new(0),
        })
    }

    /// Reads the endpoint and key from the environment.
    pub fn from_env(mut cfg: RemoteEmbedderConfig) -> Result<Self> {
        if let Ok(url) = std::env::var(EMBED_URL_ENV) {
            cfg.url = url;
        }
        if let Ok(key) = std::env::var(EMBED_KEY_ENV) {
            cfg.key = Some(key);
        }
        Self::new(cfg)
    }

    /// Number of HTTP requests issued so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let _slot = self.gate.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let transport = |message: String| Error::Transport {
            endpoint: self.cfg.url.clone(),
            message,
        };
        let mut req = self.agent.post(&self.cfg.url);
        if let Some(key) = &self.cfg.key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(json!({ "model": self.cfg.id, "input": texts }))
            .map_err(|e| transport(e.to_string()))?;
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| transport(format!("unreadable response: {e}")))?;
        let vectors = parse_embeddings(&body)
            .ok_or_else(|| transport("response carries no embeddings".into()))?;
        if vectors.len() != texts.len() {
            return Err(transport(format!("{} embeddings for {} inputs", vectors.len(), texts.len())));
        }
        vectors
            .into_iter()
            .map(|mut v| {
                if v.len() != self.cfg.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.cfg.dim,
                        actual: v.len(),
                    });
                }
                if !l2_normalize(&mut v) {
                    return Err(Error::UndefinedSimilarity);
                }
                Ok(v)
            })
            .collect()
    }
}

fn parse_embeddings(body: &Value) -> Option<Vec<Vec<f32>>> {
    let to_vec = |v: &Value| -> Option<Vec<f32>> {
        v.as_array()?.iter().map(|x| x.as_f64().map(|f| f as f32)).collect()
    };
    if let Some(data) = body.get("data").and_then(Value::as_array) {
        return data.iter().map(|d| d.get("embedding").and_then(to_vec)).collect();
    }
    body.get("embeddings")?.as_array()?.iter().map(to_vec).collect()
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.cfg.id
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.cfg.batch_size) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_response_shapes() {
        let a = json!({"data": [{"embedding": [1.0, 0.0]}, {"embedding": [0.0, 2.0]}]});
        assert_eq!(parse_embeddings(&a).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
        let b = json!({"embeddings": [[3.0, 4.0]]});
        assert_eq!(parse_embeddings(&b).unwrap(), vec![vec![3.0, 4.0]]);
        assert!(parse_embeddings(&json!({"nope": 1})).is_none());
        assert!(parse_embeddings(&json!({"embeddings": [["x"]]})).is_none());
    }

    #[test]
    fn requires_endpoint() {
        assert!(RemoteEmbedder::new(RemoteEmbedderConfig::default()).is_err());
    }
}
