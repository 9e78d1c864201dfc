//! Pipeline configuration and the plain-text `key = value` config format.
//!
//! ```text
//! # comments start with '#'
//! beta = 0.29
//! tau = 2
//! fusion.d_h = 64
//! provider.llm.url = http://localhost:8080/complete
//! provider.llm.auth_token_env = LLM_TOKEN
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::Aggregation;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

/// Dimensions of the fusion head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    /// Branch feature dimension.
    pub d: usize,
    /// Reliability (confidence) hidden dimension.
    pub d_p: usize,
    /// Attention dimension.
    pub d_h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Alignment gate threshold.
    pub beta: f64,
    /// Maximum self-correction rounds.
    pub tau: u32,
    /// Refutation threshold below which a rollback is requested.
    pub gamma: f64,
    pub max_claims: usize,
    pub llm_temperature: f64,
    pub max_context_tokens: usize,
    /// Context limit for prompts that carry visual evidence.
    pub extended_context_tokens: usize,
    pub max_rollbacks: u32,
    pub feature_dim_text: usize,
    pub feature_dim_joint: usize,
    pub fusion_dims: FusionDims,
    pub seed: u64,
    pub alignment_aggregation: Aggregation,
    /// Cap on whitespace tokens embedded for the local consistency score.
    pub max_local_tokens: usize,
    /// Attempts per provider call before giving up.
    pub provider_attempts: u32,
    /// Base delay of the exponential backoff between attempts.
    pub retry_backoff_ms: u64,
    /// Issue the three stage-one prompts concurrently.
    pub parallel_stage_one: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            beta: 0.29,
            tau: 2,
            gamma: 0.2,
            max_claims: 4,
            llm_temperature: 0.4,
            max_context_tokens: 4096,
            extended_context_tokens: 8192,
            max_rollbacks: 1,
            feature_dim_text: 768,
            feature_dim_joint: 512,
            fusion_dims: FusionDims {
                d: 768,
                d_p: 64,
                d_h: 64,
            },
            seed: 42,
            alignment_aggregation: Aggregation::Mean,
            max_local_tokens: 64,
            provider_attempts: 3,
            retry_backoff_ms: 200,
            parallel_stage_one: true,
        }
    }
}

impl PipelineConfig {
    /// Small dimensions suitable for mock providers and tests.
    pub fn compact(dim: usize) -> Self {
        Self {
            feature_dim_text: dim,
            feature_dim_joint: dim,
            fusion_dims: FusionDims {
                d: dim,
                d_p: 8,
                d_h: 8,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(ConfigError::Invalid(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ConfigError::Invalid(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(0.0..=2.0).contains(&self.llm_temperature) {
            return Err(ConfigError::Invalid(format!(
                "llm_temperature {} outside [0, 2]",
                self.llm_temperature
            )));
        }
        if self.max_claims == 0 {
            return Err(ConfigError::Invalid("max_claims must be at least 1".into()));
        }
        if self.provider_attempts == 0 {
            return Err(ConfigError::Invalid("provider_attempts must be at least 1".into()));
        }
        if self.extended_context_tokens < self.max_context_tokens {
            return Err(ConfigError::Invalid(
                "extended_context_tokens is smaller than max_context_tokens".into(),
            ));
        }
        let dims = self.fusion_dims;
        if self.feature_dim_text == 0 || self.feature_dim_joint == 0 || dims.d_p == 0 || dims.d_h == 0 {
            return Err(ConfigError::Invalid("dimensions must be positive".into()));
        }
        if dims.d != self.feature_dim_text {
            return Err(ConfigError::DimensionMismatch(format!(
                "fusion.d = {} but feature_dim_text = {}",
                dims.d, self.feature_dim_text
            )));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "beta" => self.beta = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "max_claims" => self.max_claims = parse(key, value)?,
            "llm_temperature" => self.llm_temperature = parse(key, value)?,
            "max_context_tokens" => self.max_context_tokens = parse(key, value)?,
            "extended_context_tokens" => self.extended_context_tokens = parse(key, value)?,
            "max_rollbacks" => self.max_rollbacks = parse(key, value)?,
            "feature_dim_text" => self.feature_dim_text = parse(key, value)?,
            "feature_dim_joint" => self.feature_dim_joint = parse(key, value)?,
            "fusion.d" => self.fusion_dims.d = parse(key, value)?,
            "fusion.d_p" => self.fusion_dims.d_p = parse(key, value)?,
            "fusion.d_h" => self.fusion_dims.d_h = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "alignment_aggregation" => {
                self.alignment_aggregation = match value.to_ascii_lowercase().as_str() {
                    "mean" => Aggregation::Mean,
                    "min" => Aggregation::Min,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            msg: format!("expected mean or min, got `{other}`"),
                        })
                    }
                }
            }
            "max_local_tokens" => self.max_local_tokens = parse(key, value)?,
            "provider_attempts" => self.provider_attempts = parse(key, value)?,
            "retry_backoff_ms" => self.retry_backoff_ms = parse(key, value)?,
            "parallel_stage_one" => self.parallel_stage_one = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        msg: e.to_string(),
    })
}

/// Connection settings for one HTTP provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    /// Name of the environment variable holding a bearer token.
    pub auth_token_env: Option<String>,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            auth_token_env: None,
            timeout_ms: 30_000,
            max_in_flight: 8,
        }
    }
}

/// Endpoints keyed by provider role (`llm`, `sentence_embedder`,
/// `claim_embedder`, `joint_embedder`, `vision.ocr`, ...).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderEndpoints {
    pub endpoints: BTreeMap<String, EndpointConfig>,
}

impl ProviderEndpoints {
    pub const ROLES: [&'static str; 8] = [
        "llm",
        "sentence_embedder",
        "claim_embedder",
        "joint_embedder",
        "vision.ocr",
        "vision.image_captioning",
        "vision.dense_captioning",
        "vision.image_tagging",
    ];

    pub fn get(&self, role: &str) -> Option<&EndpointConfig> {
        self.endpoints.get(role)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (role, field) = key
            .rsplit_once('.')
            .ok_or_else(|| ConfigError::UnknownKey(format!("provider.{key}")))?;
        if !Self::ROLES.contains(&role) {
            return Err(ConfigError::UnknownKey(format!("provider.{key}")));
        }
        let full = format!("provider.{key}");
        let entry = self.endpoints.entry(role.to_string()).or_default();
        match field {
            "url" => entry.url = value.to_string(),
            "auth_token_env" => entry.auth_token_env = Some(value.to_string()),
            "timeout_ms" => entry.timeout_ms = parse(&full, value)?,
            "max_in_flight" => entry.max_in_flight = parse(&full, value)?,
            _ => return Err(ConfigError::UnknownKey(full)),
        }
        Ok(())
    }
}

/// Everything a config file can hold.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub pipeline: PipelineConfig,
    pub endpoints: ProviderEndpoints,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ConfigFile::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.pipeline.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key.strip_prefix("provider.") {
            Some(rest) => self.endpoints.set(rest, value),
            None => self.pipeline.set(key, value),
        }
    }

    /// Renders the pipeline settings back into the file format.
    pub fn render_pipeline(cfg: &PipelineConfig) -> String {
        let agg = match cfg.alignment_aggregation {
            Aggregation::Mean => "mean",
            Aggregation::Min => "min",
        };
        [
            format!("beta = {}", cfg.beta),
            format!("tau = {}", cfg.tau),
            format!("gamma = {}", cfg.gamma),
            format!("max_claims = {}", cfg.max_claims),
            format!("llm_temperature = {}", cfg.llm_temperature),
            format!("max_context_tokens = {}", cfg.max_context_tokens),
            format!("extended_context_tokens = {}", cfg.extended_context_tokens),
            format!("max_rollbacks = {}", cfg.max_rollbacks),
            format!("feature_dim_text = {}", cfg.feature_dim_text),
            format!("feature_dim_joint = {}", cfg.feature_dim_joint),
            format!("fusion.d = {}", cfg.fusion_dims.d),
            format!("fusion.d_p = {}", cfg.fusion_dims.d_p),
            format!("fusion.d_h = {}", cfg.fusion_dims.d_h),
            format!("seed = {}", cfg.seed),
            format!("alignment_aggregation = {agg}"),
            format!("max_local_tokens = {}", cfg.max_local_tokens),
            format!("provider_attempts = {}", cfg.provider_attempts),
            format!("retry_backoff_ms = {}", cfg.retry_backoff_ms),
            format!("parallel_stage_one = {}", cfg.parallel_stage_one),
        ]
        .join("\n")
    }
}
