//! Deterministic fixture-driven providers for hermetic runs.
//!
//! A fixture directory holds JSON files with any of these sections:
//!
//! ```json
//! {
//!   "strict": false,
//!   "llm": [{"prompt": "extract", "when": {"text": "..."}, "output": "1. ..."},
//!           {"prompt": "summarize", "input_hash": "<sha256>", "output": "..."},
//!           {"prompt": "auth", "when": {"text": "..."}, "fail": true}],
//!   "text_embeddings": [{"role": "claim", "text": "...", "vector": [1.0, 0.0]}],
//!   "joint_embeddings": [{"image": "case1.img", "vector": [1.0]},
//!                        {"text": "...", "vector": [0.95, 0.31]}],
//!   "images": ["case2.img"],
//!   "vision": [{"tool": "ocr", "image": "case3.img", "items": ["TEAM USA"]}]
//! }
//! ```
//!
//! Files are merged in file-name order. Vectors shorter than the configured
//! dimension are zero-padded, then every embedding is scaled to unit
//! length. Texts without an override hash onto the unit sphere, seeded by
//! the configured seed. LLM requests without a matching fixture fall back to
//! a simple echo policy unless `strict` is set.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{
    estimate_tokens, EmbedRole, EmbeddingVector, JointEmbedder, JointPayload, LlmProvider,
    LlmRequest, PromptId, ProviderError, ProviderSet, Reply, RetryPolicy, TextEmbedder, ToolKind,
    VisionTool,
};
use crate::item::{format_claim_lines, split_sentences};

#[derive(Debug, Error)]
pub enum MockError {
    #[error("reading fixtures: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture file {file}: {source}")]
    Parse {
        file: String,
        source: serde_json::Error,
    },
    #[error("fixture vector for `{key}` has {len} entries but the dimension is {dim}")]
    VectorTooLong { key: String, len: usize, dim: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmFixture {
    pub prompt: PromptId,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub when: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fail: bool,
    /// Fail this many times before answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_first: Option<u32>,
}

impl Default for PromptId {
    fn default() -> Self {
        PromptId::Extract
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<EmbedRole>,
    pub text: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionFixture {
    pub tool: ToolKind,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fail: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixtures {
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub llm: Vec<LlmFixture>,
    #[serde(default)]
    pub text_embeddings: Vec<EmbeddingFixture>,
    #[serde(default)]
    pub joint_embeddings: Vec<JointFixture>,
    #[serde(default)]
    pub images: Vec<String>,
    #[serde(default)]
    pub vision: Vec<VisionFixture>,
}

impl MockFixtures {
    pub fn load_dir(dir: &Path) -> Result<Self, MockError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut all = MockFixtures::default();
        for p in paths {
            let text = std::fs::read_to_string(&p)?;
            let part: MockFixtures = serde_json::from_str(&text).map_err(|source| MockError::Parse {
                file: p.display().to_string(),
                source,
            })?;
            all.merge(part);
        }
        Ok(all)
    }

    pub fn merge(&mut self, other: MockFixtures) {
        self.strict |= other.strict;
        self.llm.extend(other.llm);
        self.text_embeddings.extend(other.text_embeddings);
        self.joint_embeddings.extend(other.joint_embeddings);
        self.images.extend(other.images);
        self.vision.extend(other.vision);
    }

    pub fn llm_when(&mut self, prompt: PromptId, when: &[(&str, &str)], output: &str) -> &mut Self {
        self.llm.push(LlmFixture {
            prompt,
            when: when.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            output: Some(output.to_string()),
            ..Default::default()
        });
        self
    }

    pub fn llm_fail(&mut self, prompt: PromptId, when: &[(&str, &str)]) -> &mut Self {
        self.llm.push(LlmFixture {
            prompt,
            when: when.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            fail: true,
            ..Default::default()
        });
        self
    }

    pub fn text_vector(&mut self, role: Option<EmbedRole>, text: &str, vector: &[f64]) -> &mut Self {
        self.text_embeddings.push(EmbeddingFixture {
            role,
            text: text.to_string(),
            vector: vector.to_vec(),
        });
        self
    }

    pub fn joint_text(&mut self, text: &str, vector: &[f64]) -> &mut Self {
        self.joint_embeddings.push(JointFixture {
            text: Some(text.to_string()),
            image: None,
            vector: vector.to_vec(),
        });
        self
    }

    pub fn joint_image(&mut self, image: &str, vector: &[f64]) -> &mut Self {
        self.joint_embeddings.push(JointFixture {
            text: None,
            image: Some(image.to_string()),
            vector: vector.to_vec(),
        });
        self
    }

    pub fn image(&mut self, image: &str) -> &mut Self {
        self.images.push(image.to_string());
        self
    }

    pub fn vision(&mut self, tool: ToolKind, image: &str, items: &[&str]) -> &mut Self {
        self.vision.push(VisionFixture {
            tool,
            image: image.to_string(),
            items: Some(items.iter().map(|s| s.to_string()).collect()),
            output: None,
            fail: false,
        });
        self
    }

    pub fn vision_fail(&mut self, tool: ToolKind, image: &str) -> &mut Self {
        self.vision.push(VisionFixture {
            tool,
            image: image.to_string(),
            items: None,
            output: None,
            fail: true,
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockOptions {
    pub seed: u64,
    pub dim_text: usize,
    pub dim_joint: usize,
    /// Real sleep of up to this many milliseconds per call. Recorded
    /// latencies stay simulated and deterministic.
    pub jitter_ms: u64,
    pub attempts: u32,
}

impl MockOptions {
    pub fn new(seed: u64, dim_text: usize, dim_joint: usize) -> Self {
        Self {
            seed,
            dim_text,
            dim_joint,
            jitter_ms: 0,
            attempts: 3,
        }
    }
}

struct World {
    opts: MockOptions,
    strict: bool,
    /// Sorted most-specific first.
    llm: Vec<(LlmFixture, AtomicU32)>,
    text: HashMap<(Option<EmbedRole>, String), Vec<f64>>,
    joint_text: HashMap<String, Vec<f64>>,
    joint_image: HashMap<String, Vec<f64>>,
    images: HashSet<String>,
    vision: HashMap<(ToolKind, String), VisionFixture>,
}

impl World {
    fn build(fixtures: MockFixtures, opts: MockOptions) -> Result<Self, MockError> {
        let pad = |key: &str, v: &[f64], dim: usize| -> Result<Vec<f64>, MockError> {
            if v.len() > dim {
                return Err(MockError::VectorTooLong {
                    key: key.to_string(),
                    len: v.len(),
                    dim,
                });
            }
            let mut out = v.to_vec();
            out.resize(dim, 0.0);
            Ok(out)
        };

        let mut llm: Vec<LlmFixture> = fixtures.llm;
        llm.sort_by_key(|f| std::cmp::Reverse(f.when.len() + usize::from(f.input_hash.is_some()) * 100));

        let mut text = HashMap::new();
        for f in fixtures.text_embeddings {
            let v = pad(&f.text, &f.vector, opts.dim_text)?;
            text.insert((f.role, f.text), v);
        }
        let mut joint_text = HashMap::new();
        let mut joint_image = HashMap::new();
        let mut images: HashSet<String> = fixtures.images.into_iter().collect();
        for f in fixtures.joint_embeddings {
            if let Some(t) = f.text {
                joint_text.insert(t.clone(), pad(&t, &f.vector, opts.dim_joint)?);
            }
            if let Some(i) = f.image {
                joint_image.insert(i.clone(), pad(&i, &f.vector, opts.dim_joint)?);
                images.insert(i);
            }
        }
        let mut vision = HashMap::new();
        for f in fixtures.vision {
            images.insert(f.image.clone());
            vision.insert((f.tool, f.image.clone()), f);
        }
        Ok(Self {
            opts,
            strict: fixtures.strict,
            llm: llm.into_iter().map(|f| (f, AtomicU32::new(0))).collect(),
            text,
            joint_text,
            joint_image,
            images,
            vision,
        })
    }

    fn jitter(&self) {
        if self.opts.jitter_ms > 0 {
            let ms = rand::rng().random_range(0..=self.opts.jitter_ms);
            std::thread::sleep(Duration::from_millis(ms));
        }
    }

    fn find_llm(&self, request: &LlmRequest) -> Option<&(LlmFixture, AtomicU32)> {
        let mut hash = None;
        self.llm.iter().find(|(f, _)| {
            if f.prompt != request.prompt_id {
                return false;
            }
            if let Some(h) = &f.input_hash {
                let actual = hash.get_or_insert_with(|| request.input_hash());
                if !h.eq_ignore_ascii_case(actual) {
                    return false;
                }
            }
            f.when
                .iter()
                .all(|(k, v)| request.variables.get(k).is_some_and(|x| x.trim() == v.trim()))
        })
    }

    fn resolvable(&self, image: &str) -> bool {
        self.images.contains(image)
    }
}

/// Seeded hash of `text` onto the unit sphere in `dim` dimensions.
pub fn hash_to_sphere(seed: u64, domain: &str, text: &str, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    let mut rng = ChaCha8Rng::from_seed(key);
    let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    crate::linalg::normalized(&raw)
}

/// Answer used when no fixture matches and the world is not strict.
fn echo_completion(request: &LlmRequest) -> String {
    let var = |k: &str| request.variables.get(k).map(String::as_str).unwrap_or("");
    match request.prompt_id {
        PromptId::Extract | PromptId::ReExtract => {
            let sentences = split_sentences(var("text"));
            format_claim_lines(sentences.iter().map(String::as_str))
        }
        PromptId::Auth => format!("Style analysis: {}", var("text")),
        PromptId::Contra => format!("Logic analysis: {}", var("text")),
        PromptId::Correct => var("claims").to_string(),
        PromptId::Summarize => split_sentences(var("text")).into_iter().next().unwrap_or_default(),
        PromptId::Consolidate => var("evidence")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join("; "),
        PromptId::CategorizeClaim => String::new(),
    }
}

pub struct MockLlm {
    world: Arc<World>,
}

impl LlmProvider for MockLlm {
    fn name(&self) -> &str {
        "mock-llm"
    }

    fn complete(&self, request: &LlmRequest, prompt: &str) -> Result<Reply<String>, ProviderError> {
        self.world.jitter();
        let text = match self.world.find_llm(request) {
            Some((fixture, counter)) => {
                if fixture.fail {
                    return Err(ProviderError::Transport(format!(
                        "scripted failure for {}",
                        request.prompt_id.name()
                    )));
                }
                if let Some(n) = fixture.fail_first {
                    if counter.fetch_add(1, Ordering::SeqCst) < n {
                        return Err(ProviderError::Transport(format!(
                            "scripted transient failure for {}",
                            request.prompt_id.name()
                        )));
                    }
                }
                fixture.output.clone().unwrap_or_else(|| echo_completion(request))
            }
            None if self.world.strict => {
                return Err(ProviderError::MissingFixture(format!(
                    "{} ({})",
                    request.prompt_id.name(),
                    request.input_hash()
                )))
            }
            None => echo_completion(request),
        };
        let tokens_in = estimate_tokens(prompt) as u64;
        let tokens_out = estimate_tokens(&text) as u64;
        Ok(Reply {
            tokens_in: Some(tokens_in.max(1)),
            tokens_out: Some(tokens_out),
            simulated_ms: Some(30 + tokens_in / 20 + 2 * tokens_out),
            ..Reply::new(text)
        })
    }
}

pub struct MockTextEmbedder {
    world: Arc<World>,
    role: EmbedRole,
    name: &'static str,
}

impl TextEmbedder for MockTextEmbedder {
    fn name(&self) -> &str {
        self.name
    }

    fn dim(&self) -> usize {
        self.world.opts.dim_text
    }

    fn embed(&self, text: &str) -> Result<Reply<EmbeddingVector>, ProviderError> {
        self.world.jitter();
        let w = &self.world;
        let values = w
            .text
            .get(&(Some(self.role), text.to_string()))
            .or_else(|| w.text.get(&(None, text.to_string())))
            .cloned()
            .unwrap_or_else(|| hash_to_sphere(w.opts.seed, self.name, text, w.opts.dim_text));
        let ms = 5 + estimate_tokens(text) as u64 / 50;
        Ok(Reply::simulated(EmbeddingVector::unit(values), ms))
    }
}

pub struct MockJointEmbedder {
    world: Arc<World>,
}

impl JointEmbedder for MockJointEmbedder {
    fn name(&self) -> &str {
        "mock-joint"
    }

    fn dim(&self) -> usize {
        self.world.opts.dim_joint
    }

    fn embed(&self, payload: &JointPayload) -> Result<Reply<EmbeddingVector>, ProviderError> {
        self.world.jitter();
        let w = &self.world;
        let values = match payload {
            JointPayload::Text(t) => w
                .joint_text
                .get(t)
                .cloned()
                .unwrap_or_else(|| hash_to_sphere(w.opts.seed, "joint-text", t, w.opts.dim_joint)),
            JointPayload::Image(i) => {
                if !w.resolvable(i) {
                    return Err(ProviderError::UnresolvableImage(i.clone()));
                }
                w.joint_image
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| hash_to_sphere(w.opts.seed, "joint-image", i, w.opts.dim_joint))
            }
        };
        Ok(Reply::simulated(EmbeddingVector::unit(values), 8))
    }
}

pub struct MockVisionTool {
    world: Arc<World>,
    kind: ToolKind,
    name: String,
}

impl VisionTool for MockVisionTool {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ToolKind {
        self.kind
    }

    fn run(&self, image: &str) -> Result<Reply<String>, ProviderError> {
        self.world.jitter();
        let w = &self.world;
        if !w.resolvable(image) {
            return Err(ProviderError::UnresolvableImage(image.to_string()));
        }
        let text = match w.vision.get(&(self.kind, image.to_string())) {
            Some(f) if f.fail => {
                return Err(ProviderError::Transport(format!("scripted {} failure", self.kind)))
            }
            Some(f) => match (&f.items, &f.output) {
                (Some(items), _) => items.join("\n"),
                (None, Some(out)) => out.clone(),
                (None, None) => format!("no {} findings", self.kind),
            },
            None if w.strict => {
                return Err(ProviderError::MissingFixture(format!("{} on {image}", self.kind)))
            }
            None => format!("no {} findings", self.kind),
        };
        Ok(Reply::simulated(text, 120))
    }
}

/// Builds a complete mock [`ProviderSet`].
pub fn mock_provider_set(fixtures: MockFixtures, opts: MockOptions) -> Result<ProviderSet, MockError> {
    let world = Arc::new(World::build(fixtures, opts)?);
    let vision_tools = ToolKind::ALL
        .into_iter()
        .map(|kind| {
            let tool: Arc<dyn VisionTool> = Arc::new(MockVisionTool {
                world: world.clone(),
                kind,
                name: format!("mock-{kind}"),
            });
            (kind, tool)
        })
        .collect();
    Ok(ProviderSet {
        llm: Arc::new(MockLlm { world: world.clone() }),
        sentence_embedder: Arc::new(MockTextEmbedder {
            world: world.clone(),
            role: EmbedRole::Sentence,
            name: "mock-sentence",
        }),
        claim_embedder: Arc::new(MockTextEmbedder {
            world: world.clone(),
            role: EmbedRole::Claim,
            name: "mock-claim",
        }),
        joint_embedder: Arc::new(MockJointEmbedder { world }),
        vision_tools,
        retry: RetryPolicy {
            attempts: opts.attempts.max(1),
            backoff_ms: 0,
            deterministic_timing: true,
        },
    })
}
