//! JSON-over-HTTP provider clients.
//!
//! Every role is a `POST` to its configured URL:
//!
//! | role            | request                                   | response                                   |
//! |-----------------|-------------------------------------------|--------------------------------------------|
//! | llm             | `{prompt_id, prompt, temperature, max_context_tokens}` | `{completion, tokens_in?, tokens_out?}` |
//! | text embedder   | `{input}` / `{inputs}`                    | `{embedding}` / `{embeddings}`             |
//! | joint embedder  | `{text}` or `{image}`                     | `{embedding}`                              |
//! | vision tool     | `{tool, image}`                           | `{items: [..]}`                            |
//!
//! A bearer token is read from the environment variable named by
//! `auth_token_env`. 5xx and 429 map to retriable transport errors, other
//! 4xx to [`ProviderError::BadResponse`], except a body carrying
//! `"error": "unresolvable_image"`.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    EmbeddingVector, JointEmbedder, JointPayload, LlmProvider, LlmRequest, ProviderError,
    ProviderSet, Reply, RetryPolicy, TextEmbedder, ToolKind, VisionTool,
};
use crate::config::{EndpointConfig, ProviderEndpoints};

/// Counting semaphore bounding concurrent requests to one endpoint.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpClient {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    gate: Gate,
}

impl HttpClient {
    pub fn new(endpoint: &EndpointConfig) -> Result<Self, ProviderError> {
        if endpoint.url.is_empty() {
            return Err(ProviderError::MissingRole("endpoint url is empty".into()));
        }
        let token = match &endpoint.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::MissingRole(format!("credential variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: endpoint.url.clone(),
            token,
            gate: Gate::new(endpoint.max_in_flight),
        })
    }

    fn post<T: DeserializeOwned>(&self, body: &Value) -> Result<T, ProviderError> {
        let _permit = self.gate.acquire();
        let mut request = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(ProviderError::Transport(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            let kind = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string));
            if kind.as_deref() == Some("unresolvable_image") {
                let image = body.get("image").and_then(Value::as_str).unwrap_or("").to_string();
                return Err(ProviderError::UnresolvableImage(image));
            }
            return Err(ProviderError::BadResponse(format!("HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::BadResponse(format!("{e}: {text}")))
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    completion: String,
    tokens_in: Option<u64>,
    tokens_out: Option<u64>,
}

#[derive(Deserialize)]
struct EmbeddingBody {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbeddingsBody {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct VisionBody {
    items: Vec<String>,
}

fn finite(values: Vec<f64>) -> Result<Vec<f64>, ProviderError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(values)
    } else {
        Err(ProviderError::BadResponse("non-finite embedding entry".into()))
    }
}

pub struct HttpLlm {
    client: HttpClient,
}

impl HttpLlm {
    pub fn new(endpoint: &EndpointConfig) -> Result<Self, ProviderError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
        })
    }
}

impl LlmProvider for HttpLlm {
    fn name(&self) -> &str {
        "http-llm"
    }

    fn complete(&self, request: &LlmRequest, prompt: &str) -> Result<Reply<String>, ProviderError> {
        let body: CompletionBody = self.client.post(&json!({
            "prompt_id": request.prompt_id,
            "prompt": prompt,
            "temperature": request.temperature,
            "max_context_tokens": request.max_context_tokens,
        }))?;
        Ok(Reply {
            tokens_in: body.tokens_in,
            tokens_out: body.tokens_out,
            ..Reply::new(body.completion)
        })
    }
}

pub struct HttpTextEmbedder {
    client: HttpClient,
    name: String,
    dim: usize,
}

impl HttpTextEmbedder {
    pub fn new(endpoint: &EndpointConfig, name: &str, dim: usize) -> Result<Self, ProviderError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
            name: name.to_string(),
            dim,
        })
    }
}

impl TextEmbedder for HttpTextEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Reply<EmbeddingVector>, ProviderError> {
        let body: EmbeddingBody = self.client.post(&json!({ "input": text }))?;
        Ok(Reply::new(EmbeddingVector::unit(finite(body.embedding)?)))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Reply<Vec<EmbeddingVector>>, ProviderError> {
        let body: EmbeddingsBody = self.client.post(&json!({ "inputs": texts }))?;
        let out = body
            .embeddings
            .into_iter()
            .map(|v| finite(v).map(EmbeddingVector::unit))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Reply::new(out))
    }
}

pub struct HttpJointEmbedder {
    client: HttpClient,
    dim: usize,
}

impl HttpJointEmbedder {
    pub fn new(endpoint: &EndpointConfig, dim: usize) -> Result<Self, ProviderError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
            dim,
        })
    }
}

impl JointEmbedder for HttpJointEmbedder {
    fn name(&self) -> &str {
        "http-joint"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, payload: &JointPayload) -> Result<Reply<EmbeddingVector>, ProviderError> {
        let request = match payload {
            JointPayload::Text(t) => json!({ "text": t }),
            JointPayload::Image(i) => json!({ "image": i }),
        };
        let body: EmbeddingBody = self.client.post(&request)?;
        Ok(Reply::new(EmbeddingVector::unit(finite(body.embedding)?)))
    }
}

pub struct HttpVisionTool {
    client: HttpClient,
    kind: ToolKind,
    name: String,
}

impl HttpVisionTool {
    pub fn new(endpoint: &EndpointConfig, kind: ToolKind) -> Result<Self, ProviderError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
            kind,
            name: format!("http-{kind}"),
        })
    }
}

impl VisionTool for HttpVisionTool {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ToolKind {
        self.kind
    }

    fn run(&self, image: &str) -> Result<Reply<String>, ProviderError> {
        let body: VisionBody = self.client.post(&json!({ "tool": self.kind, "image": image }))?;
        Ok(Reply::new(body.items.join("\n")))
    }
}

/// Builds a [`ProviderSet`] from configured endpoints; every role must be present.
pub fn http_provider_set(
    endpoints: &ProviderEndpoints,
    dim_text: usize,
    dim_joint: usize,
    retry: RetryPolicy,
) -> Result<ProviderSet, ProviderError> {
    let get = |role: &str| {
        endpoints
            .get(role)
            .ok_or_else(|| ProviderError::MissingRole(format!("no endpoint configured for `{role}`")))
    };
    let mut vision_tools: BTreeMap<ToolKind, Arc<dyn VisionTool>> = BTreeMap::new();
    for kind in ToolKind::ALL {
        let ep = get(&format!("vision.{kind}"))?;
        vision_tools.insert(kind, Arc::new(HttpVisionTool::new(ep, kind)?));
    }
    let set = ProviderSet {
        llm: Arc::new(HttpLlm::new(get("llm")?)?),
        sentence_embedder: Arc::new(HttpTextEmbedder::new(get("sentence_embedder")?, "http-sentence", dim_text)?),
        claim_embedder: Arc::new(HttpTextEmbedder::new(get("claim_embedder")?, "http-claim", dim_text)?),
        joint_embedder: Arc::new(HttpJointEmbedder::new(get("joint_embedder")?, dim_joint)?),
        vision_tools,
        retry,
    };
    set.validate()?;
    Ok(set)
}
