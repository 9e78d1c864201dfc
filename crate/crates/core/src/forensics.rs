//! Evidence-driven visual forensics: route claims to vision tools, check the
//! gathered evidence against the claims, request a re-extraction when the
//! evidence contradicts them, and consolidate the evidence into `f_v`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::item::{ClaimCategory, ClaimOrigin, ClaimSet, NewsItem};
use crate::linalg::dot;
use crate::linguistic::claims_from_completion;
use crate::providers::session::vars;
use crate::providers::{EmbedRole, EmbeddingVector, PromptId, ProviderError, Session, ToolKind};
use crate::trace::flags;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForensicsError {
    #[error("claim statement is empty")]
    EmptyClaim,
    #[error("refutation needs at least one evidence item")]
    EmptyEvidence,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub tool: ToolKind,
    /// First claim whose category routed to this tool.
    pub claim_index: usize,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub items: Vec<EvidenceItem>,
    pub consolidated_summary: String,
    pub f_v: EmbeddingVector,
    pub m_v: u8,
}

impl EvidenceBundle {
    /// `m_v = 0` iff there are no items iff `f_v` is zero.
    pub fn is_consistent(&self) -> bool {
        let empty = self.items.is_empty();
        let zero = self.f_v.is_zero();
        match self.m_v {
            0 => empty && zero,
            1 => !empty && !zero,
            _ => false,
        }
    }
}

/// Bundle used when forensics does not run.
pub fn skipped_bundle(dim: usize) -> EvidenceBundle {
    EvidenceBundle {
        items: Vec::new(),
        consolidated_summary: String::new(),
        f_v: EmbeddingVector::zeros(dim),
        m_v: 0,
    }
}

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

const INTERACTION_VERBS: &[&str] = &[
    "shake", "shakes", "shaking", "shook", "hug", "hugs", "hugging", "hugged", "kiss", "kisses",
    "kissing", "kissed", "meet", "meets", "meeting", "met", "greet", "greets", "greeting",
    "greeted", "talk", "talks", "talking", "talked", "speak", "speaks", "speaking", "spoke",
    "interview", "interviews", "interviewing", "interviewed", "play", "plays", "playing",
    "played", "fight", "fights", "fighting", "fought", "argue", "argues", "arguing", "argued",
    "protest", "protests", "protesting", "protested", "march", "marches", "marching", "marched",
    "dance", "dances", "dancing", "danced", "hold", "holds", "holding", "held", "carry",
    "carries", "carrying", "carried", "wave", "waves", "waving", "waved", "embrace", "embraces",
    "embracing", "embraced", "celebrate", "celebrates", "celebrating", "celebrated", "attend",
    "attends", "attending", "attended", "visit", "visits", "visiting", "visited", "sign", "signs",
    "signing", "signed", "rescue", "rescues", "rescuing", "rescued", "attack", "attacks",
    "attacking", "attacked", "chase", "chases", "chasing", "chased", "push", "pushes", "pushing",
    "pushed", "throw", "throws", "throwing", "threw", "kick", "kicks", "kicking", "kicked",
    "sing", "sings", "singing", "sang", "perform", "performs", "performing", "performed",
    "discuss", "discusses", "discussing", "discussed", "arrest", "arrests", "arresting",
    "arrested", "help", "helps", "helping", "helped", "feed", "feeds", "feeding", "fed",
];

const FUNCTION_VERBS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "do", "does", "did",
    "will", "would", "can", "could", "should", "may", "might", "must", "says", "said",
];

fn words(statement: &str) -> Vec<&str> {
    statement
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect()
}

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase) && word != "I"
}

/// Deterministic category rules used when the LLM answer is unusable.
///
/// Digits, month names or capitalized words past the first position (names,
/// named events) mark an explicit attribute; an interaction verb marks an
/// activity; a short phrase without any verb marks an entity.
pub fn rule_category(statement: &str) -> ClaimCategory {
    let ws = words(statement);
    let lower: Vec<String> = ws.iter().map(|w| w.to_lowercase()).collect();
    let has_digit = statement.chars().any(|c| c.is_ascii_digit());
    let has_month = lower.iter().any(|w| MONTHS.contains(&w.as_str()));
    let inner_name = ws.iter().skip(1).any(|w| is_capitalized(w));
    let leading_name = ws.len() >= 2 && is_capitalized(ws[0]) && is_capitalized(ws[1]);
    if has_digit || has_month || inner_name || leading_name {
        return ClaimCategory::ExplicitAttribute;
    }
    if lower.iter().any(|w| INTERACTION_VERBS.contains(&w.as_str())) {
        return ClaimCategory::ActivityInteraction;
    }
    let verbish = lower.iter().any(|w| {
        FUNCTION_VERBS.contains(&w.as_str()) || (w.len() > 4 && (w.ends_with("ing") || w.ends_with("ed")))
    });
    if !verbish && !ws.is_empty() && ws.len() <= 6 {
        return ClaimCategory::EntityCentric;
    }
    ClaimCategory::General
}

/// Asks the LLM for a category, falling back to [`rule_category`]. The
/// boolean is true when the fallback decided.
pub fn classify_claim(session: &mut Session, statement: &str) -> Result<(ClaimCategory, bool), ForensicsError> {
    if statement.trim().is_empty() {
        return Err(ForensicsError::EmptyClaim);
    }
    let answer = session.llm(
        PromptId::CategorizeClaim,
        vars([("claim", statement.to_string())]),
        usize::MAX,
        "categorize",
    );
    match answer.ok().and_then(|a| ClaimCategory::parse_loose(&a)) {
        Some(c) => Ok((c, false)),
        None => Ok((rule_category(statement), true)),
    }
}

pub fn route_tools(category: ClaimCategory) -> Vec<ToolKind> {
    match category {
        ClaimCategory::ExplicitAttribute => vec![ToolKind::Ocr, ToolKind::ImageTagging],
        ClaimCategory::ActivityInteraction => vec![ToolKind::DenseCaptioning],
        ClaimCategory::EntityCentric => vec![ToolKind::ImageTagging, ToolKind::DenseCaptioning],
        ClaimCategory::General => vec![ToolKind::ImageCaptioning],
    }
}

/// Tools to run for a claim set, each once, in `ToolKind` order, with the
/// index of the first claim that asked for it.
pub fn plan_tools(claims: &ClaimSet) -> BTreeMap<ToolKind, usize> {
    let mut plan = BTreeMap::new();
    for (i, claim) in claims.claims.iter().enumerate() {
        for tool in route_tools(claim.category) {
            plan.entry(tool).or_insert(i);
        }
    }
    plan
}

/// Prompt form of the evidence: one `TOOL <kind>: <line>` per output line.
pub fn serialize_evidence(items: &[EvidenceItem]) -> String {
    items
        .iter()
        .flat_map(|item| {
            item.content
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(move |l| format!("TOOL {}: {l}", item.tool))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Evidence contents flattened to one line, the form embedded for refutation.
pub fn evidence_text(items: &[EvidenceItem]) -> String {
    items
        .iter()
        .flat_map(|i| i.content.lines().map(str::trim).filter(|l| !l.is_empty()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Dot product of the claim-embedder vectors of the joined claims and the
/// joined evidence. Low values mean the evidence contradicts the claims.
pub fn refutation_score(
    session: &mut Session,
    claims: &ClaimSet,
    evidence: &[EvidenceItem],
) -> Result<f64, ForensicsError> {
    if evidence.is_empty() {
        return Err(ForensicsError::EmptyEvidence);
    }
    let c = session.embed_text(EmbedRole::Claim, &claims.joined(), "refute_claims")?;
    let e = session.embed_text(EmbedRole::Claim, &evidence_text(evidence), "refute_evidence")?;
    let (c, e) = (EmbeddingVector::unit(c.values), EmbeddingVector::unit(e.values));
    if !c.normalized || !e.normalized {
        return Err(ProviderError::BadResponse("zero claim embedding".into()).into());
    }
    Ok(dot(&c.values, &e.values).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PassAction {
    Converged(EvidenceBundle),
    RollbackRequested(ClaimSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForensicOutcome {
    pub action: PassAction,
    /// Evidence gathered in this pass.
    pub evidence: Vec<EvidenceItem>,
    pub tools_run: Vec<ToolKind>,
    pub s_refute: Option<f64>,
    pub flags: Vec<String>,
}

/// One forensic pass. `prior` holds evidence from earlier passes of the same
/// sample; it joins this pass's evidence in the consolidated summary.
pub fn forensic_pass(
    session: &mut Session,
    item: &NewsItem,
    claims: &ClaimSet,
    config: &PipelineConfig,
    rollback_count: u32,
    prior: &[EvidenceItem],
) -> Result<ForensicOutcome, ForensicsError> {
    let mut out_flags = Vec::new();
    let mut evidence = Vec::new();
    let mut tools_run = Vec::new();
    for (tool, claim_index) in plan_tools(claims) {
        tools_run.push(tool);
        match session.vision(tool, &item.image, &format!("tool:{tool}")) {
            Ok(content) if !content.trim().is_empty() => evidence.push(EvidenceItem {
                tool,
                claim_index,
                content: content.trim().to_string(),
            }),
            Ok(_) => {}
            Err(e) => {
                log::warn!("{}: {tool} failed: {e}", item.id);
                out_flags.push(format!("{}{tool}", flags::TOOL_FAILED_PREFIX));
            }
        }
    }

    let degraded = |mut out_flags: Vec<String>, evidence: Vec<EvidenceItem>, tools_run, s_refute| {
        out_flags.push(flags::FORENSICS_DEGRADED.to_string());
        ForensicOutcome {
            action: PassAction::Converged(skipped_bundle(config.feature_dim_text)),
            evidence,
            tools_run,
            s_refute,
            flags: out_flags,
        }
    };
    if evidence.is_empty() {
        return Ok(degraded(out_flags, evidence, tools_run, None));
    }

    let s_refute = match refutation_score(session, claims, &evidence) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("{}: refutation unavailable: {e}", item.id);
            out_flags.push(flags::REFUTATION_UNAVAILABLE.to_string());
            None
        }
    };

    if let Some(s) = s_refute.filter(|s| *s < config.gamma) {
        if rollback_count < config.max_rollbacks {
            log::debug!("{}: refutation {s:.3} below {}; re-extracting", item.id, config.gamma);
            match re_extract(session, item, &evidence, config) {
                Ok((refined, extra)) => {
                    out_flags.extend(extra);
                    return Ok(ForensicOutcome {
                        action: PassAction::RollbackRequested(refined),
                        evidence,
                        tools_run,
                        s_refute,
                        flags: out_flags,
                    });
                }
                Err(e) => {
                    log::warn!("{}: re-extraction failed: {e}", item.id);
                    out_flags.push(flags::REEXTRACT_FAILED.to_string());
                }
            }
        } else {
            out_flags.push(flags::REFUTATION_UNRESOLVED.to_string());
        }
    }

    let mut all: Vec<EvidenceItem> = Vec::with_capacity(prior.len() + evidence.len());
    for e in prior.iter().chain(&evidence) {
        if !all.iter().any(|x| x.tool == e.tool && x.content == e.content) {
            all.push(e.clone());
        }
    }
    let serialized = serialize_evidence(&all);
    let summary = match session.llm(
        PromptId::Consolidate,
        vars([("claims", claims.to_lines()), ("evidence", serialized.clone())]),
        config.extended_context_tokens,
        "consolidate",
    ) {
        Ok(s) if !s.trim().is_empty() => s.trim().to_string(),
        other => {
            if let Err(e) = other {
                log::warn!("{}: consolidation failed: {e}", item.id);
            }
            out_flags.push(flags::CONSOLIDATE_FALLBACK.to_string());
            serialized
        }
    };
    let f_v = match session.embed_text(EmbedRole::Sentence, &summary, "embed_evidence") {
        Ok(v) if !v.is_zero() => v,
        _ => return Ok(degraded(out_flags, evidence, tools_run, s_refute)),
    };
    Ok(ForensicOutcome {
        action: PassAction::Converged(EvidenceBundle {
            items: all,
            consolidated_summary: summary,
            f_v,
            m_v: 1,
        }),
        evidence,
        tools_run,
        s_refute,
        flags: out_flags,
    })
}

fn re_extract(
    session: &mut Session,
    item: &NewsItem,
    evidence: &[EvidenceItem],
    config: &PipelineConfig,
) -> Result<(ClaimSet, Vec<String>), ForensicsError> {
    let completion = session.llm(
        PromptId::ReExtract,
        vars([
            ("text", item.text.clone()),
            ("evidence", serialize_evidence(evidence)),
            ("max_claims", config.max_claims.to_string()),
        ]),
        config.extended_context_tokens,
        "re_extract",
    )?;
    let parsed = claims_from_completion(session, &completion, ClaimOrigin::Refined, config.max_claims)
        .map_err(|e| match e {
            crate::linguistic::LinguisticError::Provider(p) => ForensicsError::Provider(p),
            other => ForensicsError::Provider(ProviderError::BadResponse(other.to_string())),
        })?;
    let extra = parsed.flags();
    Ok((parsed.claims, extra))
}
