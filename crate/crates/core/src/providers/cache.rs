//! Content-addressed cache for provider outputs.
//!
//! Keys are SHA-256 digests of `(provider name, role, canonical request
//! JSON)`. Entries live in memory and, when a directory is given, on disk at
//! `<dir>/<first two hex chars>/<digest>.json`, each holding the serialized
//! [`Reply`]. Failures are never cached.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{
    EmbeddingVector, JointEmbedder, JointPayload, LlmProvider, LlmRequest, ProviderError,
    ProviderSet, Reply, TextEmbedder, ToolKind, VisionTool,
};

#[derive(Debug, Default)]
pub struct CacheStore {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, Value>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CacheStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            ..Self::default()
        })
    }

    pub fn key(provider: &str, role: &str, request: &Value) -> String {
        let mut h = Sha256::new();
        h.update(provider.as_bytes());
        h.update([0u8]);
        h.update(role.as_bytes());
        h.update([0u8]);
        h.update(request.to_string().as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(&key[..2]).join(format!("{key}.json")))
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let mem = self.mem.lock().unwrap_or_else(|e| e.into_inner()).get(key).cloned();
        let value = mem.or_else(|| {
            let text = std::fs::read_to_string(self.path(key)?).ok()?;
            let v: Value = serde_json::from_str(&text).ok()?;
            self.mem
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .insert(key.to_string(), v.clone());
            Some(v)
        });
        match value.and_then(|v| serde_json::from_value(v).ok()) {
            Some(t) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(t)
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) {
        let Ok(v) = serde_json::to_value(value) else { return };
        if let Some(path) = self.path(key) {
            let written = path
                .parent()
                .map(std::fs::create_dir_all)
                .transpose()
                .and_then(|_| std::fs::write(&path, v.to_string()));
            if let Err(e) = written {
                log::warn!("cache write {} failed: {e}", path.display());
            }
        }
        self.mem.lock().unwrap_or_else(|e| e.into_inner()).insert(key.to_string(), v);
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.mem.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn through<T: Serialize + DeserializeOwned>(
        &self,
        provider: &str,
        role: &str,
        request: Value,
        call: impl FnOnce() -> Result<Reply<T>, ProviderError>,
    ) -> Result<Reply<T>, ProviderError> {
        let key = Self::key(provider, role, &request);
        if let Some(mut reply) = self.get::<Reply<T>>(&key) {
            reply.cached = true;
            return Ok(reply);
        }
        let reply = call()?;
        self.put(&key, &reply);
        Ok(reply)
    }
}

struct CachedLlm {
    inner: Arc<dyn LlmProvider>,
    store: Arc<CacheStore>,
}

impl LlmProvider for CachedLlm {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &LlmRequest, prompt: &str) -> Result<Reply<String>, ProviderError> {
        let key = json!({
            "prompt_id": request.prompt_id,
            "prompt": prompt,
            "temperature": request.temperature,
        });
        self.store
            .through(self.inner.name(), "llm", key, || self.inner.complete(request, prompt))
    }
}

struct CachedText {
    inner: Arc<dyn TextEmbedder>,
    store: Arc<CacheStore>,
}

impl TextEmbedder for CachedText {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<Reply<EmbeddingVector>, ProviderError> {
        self.store
            .through(self.inner.name(), "text", json!({ "input": text }), || self.inner.embed(text))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Reply<Vec<EmbeddingVector>>, ProviderError> {
        self.store.through(self.inner.name(), "text_batch", json!({ "inputs": texts }), || {
            self.inner.embed_batch(texts)
        })
    }
}

struct CachedJoint {
    inner: Arc<dyn JointEmbedder>,
    store: Arc<CacheStore>,
}

impl JointEmbedder for CachedJoint {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, payload: &JointPayload) -> Result<Reply<EmbeddingVector>, ProviderError> {
        let key = serde_json::to_value(payload).unwrap_or(Value::Null);
        self.store
            .through(self.inner.name(), "joint", key, || self.inner.embed(payload))
    }
}

struct CachedVision {
    inner: Arc<dyn VisionTool>,
    store: Arc<CacheStore>,
}

impl VisionTool for CachedVision {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn kind(&self) -> ToolKind {
        self.inner.kind()
    }

    fn run(&self, image: &str) -> Result<Reply<String>, ProviderError> {
        let key = json!({ "tool": self.inner.kind(), "image": image });
        self.store
            .through(self.inner.name(), "vision", key, || self.inner.run(image))
    }
}

/// Wraps every role of `inner` with `store`.
pub fn cached_provider_set(inner: &ProviderSet, store: Arc<CacheStore>) -> ProviderSet {
    ProviderSet {
        llm: Arc::new(CachedLlm {
            inner: inner.llm.clone(),
            store: store.clone(),
        }),
        sentence_embedder: Arc::new(CachedText {
            inner: inner.sentence_embedder.clone(),
            store: store.clone(),
        }),
        claim_embedder: Arc::new(CachedText {
            inner: inner.claim_embedder.clone(),
            store: store.clone(),
        }),
        joint_embedder: Arc::new(CachedJoint {
            inner: inner.joint_embedder.clone(),
            store: store.clone(),
        }),
        vision_tools: inner
            .vision_tools
            .iter()
            .map(|(k, t)| {
                let tool: Arc<dyn VisionTool> = Arc::new(CachedVision {
                    inner: t.clone(),
                    store: store.clone(),
                });
                (*k, tool)
            })
            .collect(),
        retry: inner.retry,
    }
}
