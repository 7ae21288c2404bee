//! Query embeddings: cache-first lookup keyed by a content hash, with an
//! optional remote endpoint to fill misses.
//!
//! Cache file format, one entry per line:
//!
//! ```text
//! <sha256 hex of text>\t<dimension>\t<v1>,<v2>,...,<vd>
//! ```
//!
//! The file is append-only. A line without a trailing newline is an
//! incomplete write and is skipped on load.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{with_retries, HttpError, JsonClient, RetryError, RetryPolicy};

pub const ENV_URL: &str = "COST_AUDIT_EMBEDDING_URL";
pub const ENV_MODEL: &str = "COST_AUDIT_EMBEDDING_MODEL";
/// Name of the variable holding the credential, not the credential itself.
pub const ENV_KEY_VAR: &str = "COST_AUDIT_EMBEDDING_KEY_VAR";
pub const DEFAULT_KEY_VAR: &str = "COST_AUDIT_EMBEDDING_KEY";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("offline miss: no cached embedding for {0}")]
    OfflineMiss(String),
    #[error("dimension drift: cache holds {cached}-d vectors, got {got}-d")]
    DimensionDrift { cached: usize, got: usize },
    #[error("cache {path} line {line}: {message}")]
    CorruptCache {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cache I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding request failed: {0}")]
    Remote(#[from] RetryError),
    #[error("embedding response has no vector: {0}")]
    BadResponse(String),
    #[error("embedding provider not configured: {0}")]
    NotConfigured(String),
}

/// Anything that maps query text to a fixed-dimension vector.
pub trait EmbeddingProvider: Sync {
    fn get(&self, query_text: &str) -> Result<Vec<f64>, EmbeddingError>;
}

pub fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Append-only on-disk vector cache. Readers see only fully written entries.
#[derive(Debug)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, Vec<f64>>>,
    dimension: RwLock<Option<usize>>,
    writer: Mutex<()>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            dimension: RwLock::new(None),
            writer: Mutex::new(()),
        }
    }

    /// Opens (or prepares to create) the cache at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref().to_path_buf();
        let cache = EmbeddingCache {
            path: Some(path.clone()),
            ..EmbeddingCache::in_memory()
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => return Err(e.into()),
        };
        cache.load(&text, &path.display().to_string())?;
        Ok(cache)
    }

    /// An in-memory cache seeded from cache-file contents.
    pub fn from_text(text: &str) -> Result<Self, EmbeddingError> {
        let cache = EmbeddingCache::in_memory();
        cache.load(text, "<memory>")?;
        Ok(cache)
    }

    fn load(&self, text: &str, label: &str) -> Result<(), EmbeddingError> {
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        if complete.len() < text.len() {
            log::warn!("{label}: ignoring incomplete trailing entry");
        }
        let corrupt = |line: usize, message: String| EmbeddingError::CorruptCache {
            path: label.to_string(),
            line,
            message,
        };
        {
            let mut entries = self.entries.write().expect("cache lock");
            let mut dimension = self.dimension.write().expect("cache lock");
            for (i, line) in complete.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let mut fields = line.split('\t');
                let (Some(hash), Some(dim), Some(vector), None) =
                    (fields.next(), fields.next(), fields.next(), fields.next())
                else {
                    return Err(corrupt(i + 1, "expected 3 tab-separated fields".into()));
                };
                let dim: usize = dim
                    .parse()
                    .map_err(|_| corrupt(i + 1, format!("bad dimension `{dim}`")))?;
                let v = vector
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<Vec<f64>, _>>()
                    .map_err(|e| corrupt(i + 1, e.to_string()))?;
                if v.len() != dim {
                    return Err(corrupt(i + 1, format!("declared {dim} values, found {}", v.len())));
                }
                match *dimension {
                    Some(d) if d != dim => {
                        return Err(EmbeddingError::DimensionDrift { cached: d, got: dim })
                    }
                    _ => *dimension = Some(dim),
                }
                entries.insert(hash.to_string(), v);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dimension(&self) -> Option<usize> {
        *self.dimension.read().expect("cache lock")
    }

    pub fn lookup(&self, hash: &str) -> Option<Vec<f64>> {
        self.entries.read().expect("cache lock").get(hash).cloned()
    }

    /// Stores a vector, appending it to the backing file if there is one.
    pub fn insert(&self, hash: &str, vector: Vec<f64>) -> Result<(), EmbeddingError> {
        let _guard = self.writer.lock().expect("cache writer lock");
        if self.entries.read().expect("cache lock").contains_key(hash) {
            return Ok(());
        }
        {
            let mut dim = self.dimension.write().expect("cache lock");
            match *dim {
                Some(d) if d != vector.len() => {
                    return Err(EmbeddingError::DimensionDrift {
                        cached: d,
                        got: vector.len(),
                    })
                }
                _ => *dim = Some(vector.len()),
            }
        }
        if let Some(path) = &self.path {
            let values: Vec<String> = vector.iter().map(|x| format!("{x:?}")).collect();
            let line = format!("{hash}\t{}\t{}\n", vector.len(), values.join(","));
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(hash.to_string(), vector);
        Ok(())
    }
}

/// Fetches a vector for text that is not cached.
pub trait RemoteEmbedder: Sync {
    fn fetch(&self, text: &str) -> Result<Vec<f64>, EmbeddingError>;
}

/// Cache in front of an optional remote embedder.
pub struct CachedEmbedder<'a> {
    cache: EmbeddingCache,
    remote: Option<&'a dyn RemoteEmbedder>,
    offline: bool,
}

impl<'a> CachedEmbedder<'a> {
    pub fn offline(cache: EmbeddingCache) -> Self {
        CachedEmbedder {
            cache,
            remote: None,
            offline: true,
        }
    }

    pub fn online(cache: EmbeddingCache, remote: &'a dyn RemoteEmbedder) -> Self {
        CachedEmbedder {
            cache,
            remote: Some(remote),
            offline: false,
        }
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl EmbeddingProvider for CachedEmbedder<'_> {
    fn get(&self, query_text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let hash = content_hash(query_text);
        if let Some(v) = self.cache.lookup(&hash) {
            return Ok(v);
        }
        let remote = match (self.offline, self.remote) {
            (false, Some(r)) => r,
            _ => return Err(EmbeddingError::OfflineMiss(hash)),
        };
        let v = remote.fetch(query_text)?;
        self.cache.insert(&hash, v.clone())?;
        Ok(v)
    }
}

/// Embedding endpoint speaking a JSON `{"input": text, "model": ...}` request.
/// Accepts OpenAI-style `data[0].embedding`, plain `embedding`, or
/// `embedding.values` responses.
pub struct HttpEmbedder {
    url: String,
    model: Option<String>,
    credential: Option<String>,
    retry: RetryPolicy,
    client: JsonClient,
}

impl HttpEmbedder {
    pub fn new(
        url: impl Into<String>,
        model: Option<String>,
        credential: Option<String>,
        retry: RetryPolicy,
    ) -> Result<Self, EmbeddingError> {
        let client = JsonClient::new(Duration::from_secs(retry.timeout_secs))
            .map_err(|e| EmbeddingError::NotConfigured(e.to_string()))?;
        Ok(HttpEmbedder {
            url: url.into(),
            model,
            credential,
            retry,
            client,
        })
    }

    /// Endpoint from `COST_AUDIT_EMBEDDING_URL`; credential from the variable
    /// named by `COST_AUDIT_EMBEDDING_KEY_VAR` (default `COST_AUDIT_EMBEDDING_KEY`).
    pub fn from_env(retry: RetryPolicy) -> Result<Self, EmbeddingError> {
        let url = std::env::var(ENV_URL).map_err(|_| EmbeddingError::NotConfigured(format!("{ENV_URL} is not set")))?;
        let key_var = std::env::var(ENV_KEY_VAR).unwrap_or_else(|_| DEFAULT_KEY_VAR.to_string());
        let credential = std::env::var(&key_var).ok();
        let model = std::env::var(ENV_MODEL).ok();
        HttpEmbedder::new(url, model, credential, retry)
    }
}

pub fn parse_embedding_response(body: &Value) -> Result<Vec<f64>, EmbeddingError> {
    let candidates = [
        body.pointer("/data/0/embedding"),
        body.pointer("/embedding/values"),
        body.pointer("/embedding"),
        body.pointer("/embeddings/0/values"),
        body.pointer("/embeddings/0"),
    ];
    let arr = candidates
        .into_iter()
        .flatten()
        .find_map(Value::as_array)
        .ok_or_else(|| EmbeddingError::BadResponse(truncate(body.to_string())))?;
    arr.iter()
        .map(|x| x.as_f64().ok_or_else(|| EmbeddingError::BadResponse(format!("non-numeric element {x}"))))
        .collect()
}

fn truncate(mut s: String) -> String {
    if s.len() > 200 {
        let mut cut = 200;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
        s.push('…');
    }
    s
}

impl RemoteEmbedder for HttpEmbedder {
    fn fetch(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let mut body = json!({ "input": text });
        if let Some(m) = &self.model {
            body["model"] = json!(m);
        }
        let (resp, _) = with_retries(&self.retry, |_| {
            self.client.post(&self.url, self.credential.as_deref(), &body)
        })?;
        parse_embedding_response(&resp)
    }
}

impl From<HttpError> for EmbeddingError {
    fn from(e: HttpError) -> Self {
        EmbeddingError::Remote(RetryError::Fatal(e))
    }
}
