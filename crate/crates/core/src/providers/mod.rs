//! Pluggable clients for every external model the pipeline consults.
//!
//! Each role (LLM analyst, sentence embedder, claim embedder, joint
//! text/image embedder, four vision tools) is a trait object. Two
//! implementations ship: [`http`] for JSON-over-HTTP services and [`mock`]
//! for hermetic, fixture-driven runs. [`cache`] wraps any set with a
//! content-addressed store.

pub mod cache;
pub mod http;
pub mod mock;
pub mod prompts;
pub mod session;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use prompts::{estimate_tokens, PromptId, PromptSet};
pub use session::Session;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("prompt needs ~{estimated} tokens but the limit is {limit}")]
    ContextOverflow { estimated: usize, limit: usize },
    #[error("prompt variable `{0}` is missing")]
    MissingVariable(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("image `{0}` cannot be resolved")]
    UnresolvableImage(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("no mock fixture for {0}")]
    MissingFixture(String),
    #[error("empty input")]
    EmptyInput,
    #[error("provider role missing: {0}")]
    MissingRole(String),
}

impl ProviderError {
    /// Transient failures worth another attempt.
    pub fn is_retriable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

/// The four image-to-text tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Ocr,
    ImageCaptioning,
    DenseCaptioning,
    ImageTagging,
}

impl ToolKind {
    pub const ALL: [ToolKind; 4] = [
        ToolKind::Ocr,
        ToolKind::ImageCaptioning,
        ToolKind::DenseCaptioning,
        ToolKind::ImageTagging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToolKind::Ocr => "ocr",
            ToolKind::ImageCaptioning => "image_captioning",
            ToolKind::DenseCaptioning => "dense_captioning",
            ToolKind::ImageTagging => "image_tagging",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ToolKind::Ocr => "OCR",
            ToolKind::ImageCaptioning => "CAPTION",
            ToolKind::DenseCaptioning => "DENSE_CAPTION",
            ToolKind::ImageTagging => "TAGS",
        }
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            normalized: false,
        }
    }

    /// Scales `values` to unit length. A zero vector stays zero and is
    /// flagged as not normalized.
    pub fn unit(values: Vec<f64>) -> Self {
        let n = crate::linalg::norm(&values);
        if n == 0.0 {
            return Self {
                values,
                normalized: false,
            };
        }
        Self {
            values: values.into_iter().map(|v| v / n).collect(),
            normalized: true,
        }
    }

    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// A rendered-prompt request to the LLM analyst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt_id: PromptId,
    pub variables: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_context_tokens: usize,
}

impl LlmRequest {
    /// SHA-256 over the prompt id and the sorted variables; the key mock
    /// fixtures may use instead of literal variable matches.
    pub fn input_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.prompt_id.name().as_bytes());
        for (k, v) in &self.variables {
            h.update(b"\n");
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Payload for the joint text/image embedder.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointPayload {
    Text(String),
    Image(String),
}

/// A provider answer plus optional accounting supplied by the provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply<T> {
    pub value: T,
    pub tokens_in: Option<u64>,
    pub tokens_out: Option<u64>,
    /// Deterministic latency reported by simulated providers.
    pub simulated_ms: Option<u64>,
    #[serde(default)]
    pub cached: bool,
}

impl<T> Reply<T> {
    pub fn new(value: T) -> Self {
        Self {
            value,
            tokens_in: None,
            tokens_out: None,
            simulated_ms: None,
            cached: false,
        }
    }

    pub fn simulated(value: T, ms: u64) -> Self {
        Self {
            simulated_ms: Some(ms),
            ..Self::new(value)
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    /// `prompt` is the fully rendered template for `request`.
    fn complete(&self, request: &LlmRequest, prompt: &str) -> Result<Reply<String>, ProviderError>;
}

pub trait TextEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Reply<EmbeddingVector>, ProviderError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Reply<Vec<EmbeddingVector>>, ProviderError> {
        let mut out = Vec::with_capacity(texts.len());
        let mut ms = Some(0u64);
        for t in texts {
            let r = self.embed(t)?;
            ms = ms.zip(r.simulated_ms).map(|(a, b)| a + b);
            out.push(r.value);
        }
        Ok(Reply {
            simulated_ms: ms,
            ..Reply::new(out)
        })
    }
}

pub trait JointEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, payload: &JointPayload) -> Result<Reply<EmbeddingVector>, ProviderError>;
}

pub trait VisionTool: Send + Sync {
    fn name(&self) -> &str;
    fn kind(&self) -> ToolKind;
    /// Tool output serialized one item per line.
    fn run(&self, image: &str) -> Result<Reply<String>, ProviderError>;
}

/// Which text embedder a call goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedRole {
    Sentence,
    Claim,
}

/// Attempts and backoff applied by [`Session`] to every call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff_ms: u64,
    /// Record zero wall time for calls without simulated latency, so mock
    /// traces are byte-identical across runs.
    pub deterministic_timing: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff_ms: 200,
            deterministic_timing: false,
        }
    }
}

#[derive(Clone)]
pub struct ProviderSet {
    pub llm: Arc<dyn LlmProvider>,
    pub sentence_embedder: Arc<dyn TextEmbedder>,
    pub claim_embedder: Arc<dyn TextEmbedder>,
    pub joint_embedder: Arc<dyn JointEmbedder>,
    pub vision_tools: BTreeMap<ToolKind, Arc<dyn VisionTool>>,
    pub retry: RetryPolicy,
}

impl fmt::Debug for ProviderSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderSet")
            .field("llm", &self.llm.name())
            .field("sentence_embedder", &self.sentence_embedder.name())
            .field("claim_embedder", &self.claim_embedder.name())
            .field("joint_embedder", &self.joint_embedder.name())
            .field("vision_tools", &self.vision_tools.keys().collect::<Vec<_>>())
            .field("retry", &self.retry)
            .finish()
    }
}

impl ProviderSet {
    pub fn validate(&self) -> Result<(), ProviderError> {
        for kind in ToolKind::ALL {
            match self.vision_tools.get(&kind) {
                Some(t) if t.kind() == kind => {}
                Some(_) => return Err(ProviderError::MissingRole(format!("{kind} tool has the wrong kind"))),
                None => return Err(ProviderError::MissingRole(format!("vision tool {kind}"))),
            }
        }
        Ok(())
    }

    pub fn text_embedder(&self, role: EmbedRole) -> &Arc<dyn TextEmbedder> {
        match role {
            EmbedRole::Sentence => &self.sentence_embedder,
            EmbedRole::Claim => &self.claim_embedder,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_vectors() {
        let v = EmbeddingVector::unit(vec![3.0, 4.0]);
        assert!(v.normalized);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        let z = EmbeddingVector::unit(vec![0.0, 0.0]);
        assert!(!z.normalized);
        assert!(z.is_zero());
    }

    #[test]
    fn input_hash_is_order_free_and_stable() {
        let mut a = LlmRequest {
            prompt_id: PromptId::Extract,
            variables: BTreeMap::new(),
            temperature: 0.4,
            max_context_tokens: 4096,
        };
        a.variables.insert("text".into(), "T".into());
        a.variables.insert("max_claims".into(), "4".into());
        let mut b = a.clone();
        b.temperature = 0.9;
        assert_eq!(a.input_hash(), b.input_hash());
        b.variables.insert("text".into(), "U".into());
        assert_ne!(a.input_hash(), b.input_hash());
        assert_eq!(a.input_hash().len(), 64);
    }

    #[test]
    fn retriable_classification() {
        assert!(ProviderError::Transport("x".into()).is_retriable());
        assert!(!ProviderError::UnresolvableImage("x".into()).is_retriable());
        assert!(!ProviderError::ContextOverflow { estimated: 1, limit: 0 }.is_retriable());
    }
}
