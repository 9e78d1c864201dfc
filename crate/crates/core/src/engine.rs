//! Per-sample state machine: linguistic analysis, consistency reflection,
//! the alignment gate, optional forensics with rollback, then fusion.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{alignment_score, AlignmentError};
use crate::config::{ConfigError, PipelineConfig};
use crate::consistency::{
    reflect_and_correct, ConsistencyContext, ConsistencyError, CorrectionOutcome, Judge, JudgeParams, LocalXAttnParams,
};
use crate::forensics::{forensic_pass, skipped_bundle, EvidenceBundle, EvidenceItem, ForensicsError, PassAction};
use crate::fusion::{blended_prediction, forward, FeatureBank, FusionError, FusionParams};
use crate::item::{ClaimSet, NewsItem};
use crate::linguistic::{run_stage_one, LinguisticError};
use crate::providers::{EmbeddingVector, PromptSet, ProviderError, ProviderSet, Session};
use crate::trace::{Action, FusionRecord, PipelineTrace, Stage, StageDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateAction {
    ProceedToForensics,
    SkipForensics,
}

/// Skip forensics when the claims already agree with the image; equality
/// counts as agreement.
pub fn decide_gate_action(s_inter: f64, beta: f64) -> GateAction {
    if s_inter >= beta {
        GateAction::SkipForensics
    } else {
        GateAction::ProceedToForensics
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("provider set: {0}")]
    Providers(ProviderError),
    #[error("fusion params: {0}")]
    Fusion(FusionError),
    #[error("consistency params: {0}")]
    Consistency(ConsistencyError),
}

/// Why a sample was aborted. Recorded in the trace as `"<kind>: <detail>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleErrorKind {
    Provider,
    Data,
}

impl SampleErrorKind {
    pub fn prefix(self) -> &'static str {
        match self {
            SampleErrorKind::Provider => "provider",
            SampleErrorKind::Data => "data",
        }
    }

    /// Classifies a trace's error string.
    pub fn of_trace(trace: &PipelineTrace) -> Option<Self> {
        let e = trace.error.as_deref()?;
        Some(if e.starts_with("provider:") {
            SampleErrorKind::Provider
        } else {
            SampleErrorKind::Data
        })
    }
}

struct SampleError {
    kind: SampleErrorKind,
    detail: String,
}

impl fmt::Display for SampleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.prefix(), self.detail)
    }
}

fn provider_err(e: impl fmt::Display) -> SampleError {
    SampleError {
        kind: SampleErrorKind::Provider,
        detail: e.to_string(),
    }
}

fn data_err(e: impl fmt::Display) -> SampleError {
    SampleError {
        kind: SampleErrorKind::Data,
        detail: e.to_string(),
    }
}

impl From<LinguisticError> for SampleError {
    fn from(e: LinguisticError) -> Self {
        match e {
            LinguisticError::Provider(p) => provider_err(p),
            other => data_err(other),
        }
    }
}

impl From<ConsistencyError> for SampleError {
    fn from(e: ConsistencyError) -> Self {
        match e {
            ConsistencyError::Provider(p) => provider_err(p),
            other => data_err(other),
        }
    }
}

impl From<AlignmentError> for SampleError {
    fn from(e: AlignmentError) -> Self {
        match e {
            AlignmentError::Provider(p) => provider_err(p),
            other => data_err(other),
        }
    }
}

impl From<ForensicsError> for SampleError {
    fn from(e: ForensicsError) -> Self {
        match e {
            ForensicsError::Provider(p) => provider_err(p),
            other => data_err(other),
        }
    }
}

impl From<FusionError> for SampleError {
    fn from(e: FusionError) -> Self {
        data_err(e)
    }
}

/// Everything needed to run samples. Shared read-only across threads.
pub struct Engine {
    pub config: PipelineConfig,
    pub providers: ProviderSet,
    pub prompts: PromptSet,
    pub fusion: FusionParams,
    pub judge: Arc<dyn Judge>,
    pub local: LocalXAttnParams,
    /// Weight of the text-only prediction in an optional blend.
    pub text_blend: Option<f64>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("providers", &self.providers)
            .field("fusion_dims", &self.fusion.dims())
            .field("text_blend", &self.text_blend)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(config: PipelineConfig, providers: ProviderSet, fusion: FusionParams) -> Result<Self, EngineError> {
        config.validate()?;
        providers.validate().map_err(EngineError::Providers)?;
        fusion.validate().map_err(EngineError::Fusion)?;
        fusion.check_dims(config.fusion_dims).map_err(EngineError::Fusion)?;
        let local = LocalXAttnParams::untrained(config.feature_dim_text, 1.0);
        Ok(Self {
            config,
            providers,
            prompts: PromptSet::builtin(),
            fusion,
            judge: Arc::new(JudgeParams::default()),
            local,
            text_blend: None,
        })
    }

    pub fn with_judge(mut self, judge: Arc<dyn Judge>) -> Self {
        self.judge = judge;
        self
    }

    pub fn with_local(mut self, local: LocalXAttnParams) -> Result<Self, EngineError> {
        local.validate().map_err(EngineError::Consistency)?;
        if local.input_dim() != self.config.feature_dim_text {
            return Err(EngineError::Consistency(ConsistencyError::DimensionMismatch(format!(
                "local params take {}-dim tokens, embeddings have {}",
                local.input_dim(),
                self.config.feature_dim_text
            ))));
        }
        self.local = local;
        Ok(self)
    }

    /// Same learned parts, different config and providers.
    pub fn variant(&self, config: PipelineConfig, providers: ProviderSet) -> Result<Engine, EngineError> {
        let mut e = Engine::new(config, providers, self.fusion.clone())?;
        e.prompts = self.prompts.clone();
        e.judge = Arc::clone(&self.judge);
        e.local = self.local.clone();
        e.text_blend = self.text_blend;
        Ok(e)
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    /// Runs one sample. Never panics on provider or data problems: the
    /// returned trace carries the error and whatever ran before it.
    pub fn run(&self, item: &NewsItem) -> PipelineTrace {
        let mut trace = PipelineTrace::new(item.id.clone(), self.config.seed);
        trace.label = item.label;
        let mut session = Session::new(&self.providers, &self.prompts, self.config.llm_temperature);
        let result = self.stages(&mut session, item, &mut trace);
        trace.extend_calls(session.take_calls());
        if let Err(e) = result {
            log::warn!("{}: sample aborted: {e}", item.id);
            trace.error = Some(e.to_string());
            trace.prediction = None;
            trace.verdict = None;
        }
        trace
    }

    fn consistency(
        &self,
        session: &mut Session,
        item: &NewsItem,
        initial: Option<ClaimSet>,
        text_vec: &EmbeddingVector,
        trace: &mut PipelineTrace,
    ) -> Result<ClaimSet, SampleError> {
        let ctx = ConsistencyContext {
            config: &self.config,
            judge: self.judge.as_ref(),
            local: &self.local,
            text_vec: Some(text_vec),
        };
        let CorrectionOutcome {
            claims,
            decisions,
            flags,
            ..
        } = reflect_and_correct(session, item, initial, &ctx)?;
        for d in decisions {
            trace.decide(d);
        }
        for f in flags {
            trace.flag(f);
        }
        Ok(claims)
    }

    fn stages(&self, session: &mut Session, item: &NewsItem, trace: &mut PipelineTrace) -> Result<(), SampleError> {
        item.validate().map_err(data_err)?;
        let cfg = &self.config;

        let stage_one = run_stage_one(session, item, cfg)?;
        for f in stage_one.flags() {
            trace.flag(f);
        }
        let style = stage_one.style;
        let initial = stage_one.extraction.ok().map(|p| p.claims);
        let mut decision = StageDecision::new(Stage::Linguistic, Action::Proceed).expect("valid");
        if let Some(c) = &initial {
            decision = decision.with_score("claims", c.len() as f64);
        }
        trace.decide(decision);

        let mut claims = self.consistency(session, item, initial, &style.f_t, trace)?;
        trace.claims = Some(claims.clone());

        let report = alignment_score(session, &claims, &item.image, cfg.alignment_aggregation)?;
        let gate = decide_gate_action(report.s_inter, cfg.beta);
        let action = match gate {
            GateAction::SkipForensics => Action::SkipForensics,
            GateAction::ProceedToForensics => Action::Proceed,
        };
        trace.decide(
            StageDecision::new(Stage::AlignmentGate, action)
                .expect("valid")
                .with_score("s_inter", report.s_inter)
                .with_score("beta", cfg.beta),
        );
        trace.alignment = Some(report);

        let bundle = match gate {
            GateAction::SkipForensics => skipped_bundle(cfg.feature_dim_text),
            GateAction::ProceedToForensics => self.forensics(session, item, &mut claims, &style.f_t, trace)?,
        };
        trace.claims = Some(claims);

        let features = [
            style.f_t.values.clone(),
            style.f_h.values.clone(),
            style.f_r.values.clone(),
            bundle.f_v.values.clone(),
        ];
        let masks = [
            mask(&style.f_t, false),
            mask(&style.f_h, style.degraded_auth),
            mask(&style.f_r, style.degraded_contra),
            bundle.m_v,
        ];
        trace.evidence = Some(bundle);
        let bank = FeatureBank::new(features, masks)?;
        let out = forward(&bank, &self.fusion)?;
        let y_hat = blended_prediction(&bank, &self.fusion, self.text_blend)?;
        trace.fusion = Some(FusionRecord {
            masks,
            alpha: out.alpha,
            mu: out.mu,
            y_hat,
        });
        trace.decide(
            StageDecision::new(Stage::Fusion, Action::Proceed)
                .expect("valid")
                .with_score("y_hat", y_hat),
        );
        trace.prediction = Some(y_hat);
        trace.verdict = Some(u8::from(y_hat >= 0.5));
        Ok(())
    }

    fn forensics(
        &self,
        session: &mut Session,
        item: &NewsItem,
        claims: &mut ClaimSet,
        text_vec: &EmbeddingVector,
        trace: &mut PipelineTrace,
    ) -> Result<EvidenceBundle, SampleError> {
        let mut rollbacks = 0u32;
        let mut prior: Vec<EvidenceItem> = Vec::new();
        loop {
            let outcome = forensic_pass(session, item, claims, &self.config, rollbacks, &prior)?;
            for f in &outcome.flags {
                trace.flag(f.clone());
            }
            let with_score = |d: StageDecision| match outcome.s_refute {
                Some(s) => d.with_score("s_refute", s),
                None => d,
            };
            match outcome.action {
                PassAction::Converged(bundle) => {
                    trace.decide(with_score(StageDecision::new(Stage::Forensics, Action::Proceed).expect("valid")));
                    return Ok(bundle);
                }
                PassAction::RollbackRequested(refined) => {
                    trace.decide(with_score(StageDecision::new(Stage::Forensics, Action::Rollback).expect("valid")));
                    rollbacks += 1;
                    for e in outcome.evidence {
                        if !prior.contains(&e) {
                            prior.push(e);
                        }
                    }
                    *claims = self.consistency(session, item, Some(refined), text_vec, trace)?;
                }
            }
        }
    }
}

fn mask(v: &EmbeddingVector, degraded: bool) -> u8 {
    u8::from(!degraded && !v.is_zero())
}

/// One-shot convenience wrapper around [`Engine`].
pub fn run_pipeline(
    item: &NewsItem,
    config: &PipelineConfig,
    providers: &ProviderSet,
    fusion_params: &FusionParams,
) -> Result<PipelineTrace, EngineError> {
    let engine = Engine::new(config.clone(), providers.clone(), fusion_params.clone())?;
    Ok(engine.run(item))
}
