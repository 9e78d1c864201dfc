//! Per-sample call recorder: applies the retry policy, enforces context
//! limits and appends one [`ProviderCall`] per logical call.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use super::{
    estimate_tokens, EmbedRole, EmbeddingVector, JointPayload, LlmRequest, PromptId, PromptSet,
    ProviderError, ProviderSet, Reply, ToolKind,
};
use crate::trace::ProviderCall;

pub struct Session<'a> {
    providers: &'a ProviderSet,
    prompts: &'a PromptSet,
    temperature: f64,
    calls: Vec<ProviderCall>,
}

impl<'a> Session<'a> {
    pub fn new(providers: &'a ProviderSet, prompts: &'a PromptSet, temperature: f64) -> Self {
        Self {
            providers,
            prompts,
            temperature,
            calls: Vec::new(),
        }
    }

    /// A fresh recorder sharing this session's providers; merge it back
    /// with [`Session::absorb`] to keep call order deterministic.
    pub fn child(&self) -> Session<'a> {
        Session::new(self.providers, self.prompts, self.temperature)
    }

    pub fn absorb(&mut self, child: Session<'a>) {
        self.calls.extend(child.calls);
    }

    pub fn providers(&self) -> &'a ProviderSet {
        self.providers
    }

    pub fn calls(&self) -> &[ProviderCall] {
        &self.calls
    }

    pub fn take_calls(&mut self) -> Vec<ProviderCall> {
        std::mem::take(&mut self.calls)
    }

    /// Builds, renders and sends an LLM request.
    pub fn llm(
        &mut self,
        prompt_id: PromptId,
        variables: BTreeMap<String, String>,
        max_context_tokens: usize,
        purpose: &str,
    ) -> Result<String, ProviderError> {
        let request = LlmRequest {
            prompt_id,
            variables,
            temperature: self.temperature,
            max_context_tokens,
        };
        self.complete(&request, purpose)
    }

    pub fn complete(&mut self, request: &LlmRequest, purpose: &str) -> Result<String, ProviderError> {
        if !(0.0..=2.0).contains(&request.temperature) {
            return Err(ProviderError::BadResponse(format!(
                "temperature {} outside [0, 2]",
                request.temperature
            )));
        }
        let prompt = self.prompts.render(request.prompt_id, &request.variables)?;
        let estimated = estimate_tokens(&prompt);
        if estimated > request.max_context_tokens {
            return Err(ProviderError::ContextOverflow {
                estimated,
                limit: request.max_context_tokens,
            });
        }
        let llm = self.providers.llm.clone();
        self.call(
            llm.name(),
            purpose,
            estimated as u64,
            || llm.complete(request, &prompt),
            |text| estimate_tokens(text) as u64,
        )
    }

    pub fn embed_text(&mut self, role: EmbedRole, text: &str, purpose: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let embedder = self.providers.text_embedder(role).clone();
        let v = self.call(embedder.name(), purpose, estimate_tokens(text) as u64, || embedder.embed(text), |_| 0)?;
        check_dim(&v, embedder.dim())?;
        Ok(v)
    }

    /// One recorded call for a whole batch.
    pub fn embed_text_batch(
        &mut self,
        role: EmbedRole,
        texts: &[String],
        purpose: &str,
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
            return Err(ProviderError::EmptyInput);
        }
        let embedder = self.providers.text_embedder(role).clone();
        let tokens: usize = texts.iter().map(|t| estimate_tokens(t)).sum();
        let vs = self.call(embedder.name(), purpose, tokens as u64, || embedder.embed_batch(texts), |_| 0)?;
        if vs.len() != texts.len() {
            return Err(ProviderError::BadResponse(format!(
                "{} embeddings for {} inputs",
                vs.len(),
                texts.len()
            )));
        }
        for v in &vs {
            check_dim(v, embedder.dim())?;
        }
        Ok(vs)
    }

    /// Joint-space embedding, always returned unit-normalized.
    pub fn embed_joint(&mut self, payload: &JointPayload, purpose: &str) -> Result<EmbeddingVector, ProviderError> {
        let size = match payload {
            JointPayload::Text(t) | JointPayload::Image(t) => t,
        };
        if size.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let embedder = self.providers.joint_embedder.clone();
        let tokens = estimate_tokens(size).max(1) as u64;
        let v = self.call(embedder.name(), purpose, tokens, || embedder.embed(payload), |_| 0)?;
        check_dim(&v, embedder.dim())?;
        let unit = EmbeddingVector::unit(v.values);
        if !unit.normalized {
            return Err(ProviderError::BadResponse("joint embedding is the zero vector".into()));
        }
        Ok(unit)
    }

    pub fn vision(&mut self, tool: ToolKind, image: &str, purpose: &str) -> Result<String, ProviderError> {
        let provider = self
            .providers
            .vision_tools
            .get(&tool)
            .cloned()
            .ok_or_else(|| ProviderError::MissingRole(format!("vision tool {tool}")))?;
        let tokens = estimate_tokens(image).max(1) as u64;
        self.call(provider.name(), purpose, tokens, || provider.run(image), |t| estimate_tokens(t) as u64)
    }

    fn call<T>(
        &mut self,
        provider: &str,
        purpose: &str,
        tokens_in_estimate: u64,
        attempt: impl Fn() -> Result<Reply<T>, ProviderError>,
        tokens_out: impl Fn(&T) -> u64,
    ) -> Result<T, ProviderError> {
        let policy = self.providers.retry;
        let started = Instant::now();
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            match attempt() {
                Ok(reply) => break Ok(reply),
                Err(e) if e.is_retriable() && attempts < policy.attempts => {
                    log::debug!("{provider}/{purpose} attempt {attempts} failed: {e}");
                    if policy.backoff_ms > 0 {
                        let delay = policy.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
                Err(e) => break Err(e),
            }
        };
        let measured = started.elapsed().as_millis() as u64;
        let wall = |simulated: Option<u64>| match simulated {
            Some(ms) => ms,
            None if policy.deterministic_timing => 0,
            None => measured,
        };
        match result {
            Ok(reply) => {
                self.calls.push(ProviderCall {
                    provider: provider.to_string(),
                    purpose: purpose.to_string(),
                    tokens_in: reply.tokens_in.unwrap_or(tokens_in_estimate).max(1),
                    tokens_out: reply.tokens_out.unwrap_or_else(|| tokens_out(&reply.value)),
                    wall_ms: wall(reply.simulated_ms),
                    attempts,
                    ok: true,
                    cached: reply.cached,
                });
                Ok(reply.value)
            }
            Err(e) => {
                self.calls.push(ProviderCall {
                    provider: provider.to_string(),
                    purpose: purpose.to_string(),
                    tokens_in: tokens_in_estimate.max(1),
                    tokens_out: 0,
                    wall_ms: wall(None),
                    attempts,
                    ok: false,
                    cached: false,
                });
                Err(e)
            }
        }
    }
}

fn check_dim(v: &EmbeddingVector, expected: usize) -> Result<(), ProviderError> {
    if v.dim() != expected {
        return Err(ProviderError::BadResponse(format!(
            "embedding has dimension {}, expected {expected}",
            v.dim()
        )));
    }
    Ok(())
}

/// Convenience for building prompt variable maps.
pub fn vars<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
