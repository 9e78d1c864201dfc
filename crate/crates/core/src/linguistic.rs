//! Stage one: claim extraction plus the two stylistic analyses, issued as
//! three independent tasks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::forensics::{classify_claim, ForensicsError};
use crate::item::{parse_claim_lines, Claim, ClaimOrigin, ClaimSet, NewsItem};
use crate::providers::session::vars;
use crate::providers::{EmbedRole, EmbeddingVector, PromptId, ProviderError, Session};
use crate::trace::flags;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinguisticError {
    #[error("news text is empty")]
    EmptyText,
    #[error("the completion contained no claims")]
    EmptyCompletion,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Claims parsed from one completion, with bookkeeping for the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedClaims {
    pub claims: ClaimSet,
    pub truncated: bool,
    /// Claims whose category came from the rule-based fallback.
    pub rule_categorized: usize,
}

impl ParsedClaims {
    pub fn flags(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.truncated {
            out.push(flags::CLAIMS_TRUNCATED.to_string());
        }
        if self.rule_categorized > 0 {
            out.push(flags::CATEGORY_FALLBACK.to_string());
        }
        out
    }
}

/// Parses a claim listing, keeps the first `max_claims` lines and
/// categorizes each claim.
pub fn claims_from_completion(
    session: &mut Session,
    completion: &str,
    origin: ClaimOrigin,
    max_claims: usize,
) -> Result<ParsedClaims, LinguisticError> {
    let mut lines = parse_claim_lines(completion);
    if lines.is_empty() {
        return Err(LinguisticError::EmptyCompletion);
    }
    let truncated = lines.len() > max_claims;
    lines.truncate(max_claims.max(1));
    let mut claims = Vec::with_capacity(lines.len());
    let mut rule_categorized = 0;
    for line in lines {
        let (category, by_rule) = match classify_claim(session, &line) {
            Ok(c) => c,
            Err(ForensicsError::Provider(e)) => return Err(e.into()),
            Err(_) => return Err(LinguisticError::EmptyCompletion),
        };
        rule_categorized += usize::from(by_rule);
        claims.push(Claim::new(line, category).map_err(|_| LinguisticError::EmptyCompletion)?);
    }
    let claims = ClaimSet::new(claims, origin).map_err(|_| LinguisticError::EmptyCompletion)?;
    Ok(ParsedClaims {
        claims,
        truncated,
        rule_categorized,
    })
}

pub fn extract_claims(
    session: &mut Session,
    item: &NewsItem,
    config: &PipelineConfig,
) -> Result<ParsedClaims, LinguisticError> {
    if item.text.trim().is_empty() {
        return Err(LinguisticError::EmptyText);
    }
    let completion = session.llm(
        PromptId::Extract,
        vars([
            ("text", item.text.clone()),
            ("max_claims", config.max_claims.to_string()),
        ]),
        config.max_context_tokens,
        "extract",
    )?;
    claims_from_completion(session, &completion, ClaimOrigin::Extracted, config.max_claims)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Analyses {
    pub auth_text: String,
    pub contra_text: String,
}

/// One stylistic branch: the analysis text and its embedding, or the zero
/// vector when the branch degraded.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleBranch {
    pub text: String,
    pub feature: EmbeddingVector,
    pub degraded: bool,
}

fn style_branch(
    session: &mut Session,
    item: &NewsItem,
    prompt: PromptId,
    config: &PipelineConfig,
) -> StyleBranch {
    let purpose = prompt.name();
    let result = session
        .llm(prompt, vars([("text", item.text.clone())]), config.max_context_tokens, purpose)
        .and_then(|text| {
            let v = session.embed_text(EmbedRole::Sentence, &text, &format!("embed_{purpose}"))?;
            Ok((text, v))
        });
    match result {
        Ok((text, feature)) if !feature.is_zero() => StyleBranch {
            text,
            feature,
            degraded: false,
        },
        other => {
            if let Err(e) = other {
                log::warn!("{}: {purpose} branch degraded: {e}", item.id);
            }
            StyleBranch {
                text: String::new(),
                feature: EmbeddingVector::zeros(config.feature_dim_text),
                degraded: true,
            }
        }
    }
}

/// Auth and Contra analyses embedded with the sentence embedder, plus the
/// raw-text feature `f_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleFeatures {
    pub f_h: EmbeddingVector,
    pub f_r: EmbeddingVector,
    pub f_t: EmbeddingVector,
    pub analyses: Analyses,
    pub degraded_auth: bool,
    pub degraded_contra: bool,
}

pub fn analyze_style(
    session: &mut Session,
    item: &NewsItem,
    config: &PipelineConfig,
) -> Result<StyleFeatures, LinguisticError> {
    if item.text.trim().is_empty() {
        return Err(LinguisticError::EmptyText);
    }
    let auth = style_branch(session, item, PromptId::Auth, config);
    let contra = style_branch(session, item, PromptId::Contra, config);
    let f_t = session.embed_text(EmbedRole::Sentence, &item.text, "embed_text")?;
    Ok(assemble(auth, contra, f_t))
}

fn assemble(auth: StyleBranch, contra: StyleBranch, f_t: EmbeddingVector) -> StyleFeatures {
    StyleFeatures {
        f_h: auth.feature,
        f_r: contra.feature,
        f_t,
        analyses: Analyses {
            auth_text: auth.text,
            contra_text: contra.text,
        },
        degraded_auth: auth.degraded,
        degraded_contra: contra.degraded,
    }
}

/// Everything stage one produces.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticResult {
    /// `Err` when extraction produced nothing usable; the consistency stage
    /// then treats the extraction as invalid.
    pub extraction: Result<ParsedClaims, LinguisticError>,
    pub style: StyleFeatures,
}

impl LinguisticResult {
    pub fn flags(&self) -> Vec<String> {
        let mut out = match &self.extraction {
            Ok(p) => p.flags(),
            Err(_) => vec![flags::EXTRACTION_EMPTY.to_string()],
        };
        if self.style.degraded_auth {
            out.push(flags::DEGRADED_AUTH.to_string());
        }
        if self.style.degraded_contra {
            out.push(flags::DEGRADED_CONTRA.to_string());
        }
        out
    }
}

/// Runs Extract, Auth and Contra, concurrently when
/// `config.parallel_stage_one` is set. Child recorders are merged back in a
/// fixed order so the trace does not depend on completion order.
pub fn run_stage_one(
    session: &mut Session,
    item: &NewsItem,
    config: &PipelineConfig,
) -> Result<LinguisticResult, LinguisticError> {
    if item.text.trim().is_empty() {
        return Err(LinguisticError::EmptyText);
    }
    let mut s_extract = session.child();
    let mut s_auth = session.child();
    let mut s_contra = session.child();
    let (extraction, auth, contra) = if config.parallel_stage_one {
        std::thread::scope(|scope| {
            let e = scope.spawn(|| extract_claims(&mut s_extract, item, config));
            let a = scope.spawn(|| style_branch(&mut s_auth, item, PromptId::Auth, config));
            let c = scope.spawn(|| style_branch(&mut s_contra, item, PromptId::Contra, config));
            (
                e.join().expect("extract task panicked"),
                a.join().expect("auth task panicked"),
                c.join().expect("contra task panicked"),
            )
        })
    } else {
        (
            extract_claims(&mut s_extract, item, config),
            style_branch(&mut s_auth, item, PromptId::Auth, config),
            style_branch(&mut s_contra, item, PromptId::Contra, config),
        )
    };
    session.absorb(s_extract);
    session.absorb(s_auth);
    session.absorb(s_contra);
    let f_t = session.embed_text(EmbedRole::Sentence, &item.text, "embed_text")?;
    Ok(LinguisticResult {
        extraction,
        style: assemble(auth, contra, f_t),
    })
}
