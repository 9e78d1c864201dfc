//! Stage two: are the extracted claims faithful to the text?
//!
//! Two scores feed a small logistic judge: the global cosine `s_g` between
//! the text and the joined claims, and a local cross-attention score `s_l`
//! over per-word embeddings. Rejected extractions are regenerated with a
//! diagnostic message for at most `tau` rounds, then replaced by a one-claim
//! summary.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::item::{Claim, ClaimCategory, ClaimOrigin, ClaimSet, NewsItem};
use crate::linalg::{dot, norm, sigmoid, softmax, Matrix};
use crate::linguistic::claims_from_completion;
use crate::providers::session::vars;
use crate::providers::{EmbedRole, EmbeddingVector, PromptId, ProviderError, Session};
use crate::trace::{Action, Stage, StageDecision};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsistencyError {
    #[error("cosine of a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("token list is empty")]
    EmptyTokens,
    #[error("summarization fallback returned nothing")]
    EmptyFallback,
    #[error("params file: {0}")]
    Params(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScores {
    pub s_g: f64,
    pub s_l: f64,
}

/// Cosine similarity of two nonzero vectors.
pub fn global_consistency(a: &[f64], b: &[f64]) -> Result<f64, ConsistencyError> {
    if a.len() != b.len() {
        return Err(ConsistencyError::DimensionMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(ConsistencyError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Single-head cross-attention scorer with a logistic readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalXAttnParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Serialize, Deserialize)]
struct LocalParamsFile {
    format: String,
    version: u32,
    params: LocalXAttnParams,
}

const LOCAL_FORMAT: &str = "local-xattn-params";

impl LocalXAttnParams {
    /// Identity projections and a constant readout: `s_l = sigmoid(b)`
    /// until the readout is fitted.
    pub fn untrained(dim: usize, b: f64) -> Self {
        Self {
            w_q: Matrix::identity(dim),
            w_k: Matrix::identity(dim),
            w_v: Matrix::identity(dim),
            w: vec![0.0; dim],
            b,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn attn_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn validate(&self) -> Result<(), ConsistencyError> {
        let (a, d) = (self.attn_dim(), self.input_dim());
        let ok = [&self.w_k, &self.w_v].iter().all(|m| m.rows() == a && m.cols() == d) && self.w.len() == a;
        if !ok {
            return Err(ConsistencyError::DimensionMismatch("local attention params".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ConsistencyError> {
        let doc = LocalParamsFile {
            format: LOCAL_FORMAT.into(),
            version: 1,
            params: self.clone(),
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| ConsistencyError::Params(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ConsistencyError::Params(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConsistencyError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConsistencyError::Params(e.to_string()))?;
        let doc: LocalParamsFile =
            serde_json::from_str(&text).map_err(|e| ConsistencyError::Params(e.to_string()))?;
        if doc.format != LOCAL_FORMAT {
            return Err(ConsistencyError::Params(format!("unexpected format `{}`", doc.format)));
        }
        doc.params.validate()?;
        Ok(doc.params)
    }
}

/// Mean-pooled attention output: claim tokens query the text tokens.
pub fn cross_attend(
    t_tokens: &[Vec<f64>],
    c_tokens: &[Vec<f64>],
    params: &LocalXAttnParams,
) -> Result<Vec<f64>, ConsistencyError> {
    if t_tokens.is_empty() || c_tokens.is_empty() {
        return Err(ConsistencyError::EmptyTokens);
    }
    params.validate()?;
    let d = params.input_dim();
    if let Some(bad) = t_tokens.iter().chain(c_tokens).find(|t| t.len() != d) {
        return Err(ConsistencyError::DimensionMismatch(format!("token dim {} vs {d}", bad.len())));
    }
    let scale = 1.0 / (params.attn_dim() as f64).sqrt();
    let keys: Vec<Vec<f64>> = t_tokens.iter().map(|t| params.w_k.matvec(t)).collect();
    let values: Vec<Vec<f64>> = t_tokens.iter().map(|t| params.w_v.matvec(t)).collect();
    let mut pooled = vec![0.0; params.attn_dim()];
    for c in c_tokens {
        let q = params.w_q.matvec(c);
        let logits: Vec<f64> = keys.iter().map(|k| dot(&q, k) * scale).collect();
        let weights = softmax(&logits);
        for (w, v) in weights.iter().zip(&values) {
            for (p, x) in pooled.iter_mut().zip(v) {
                *p += w * x;
            }
        }
    }
    let n = c_tokens.len() as f64;
    pooled.iter_mut().for_each(|p| *p /= n);
    Ok(pooled)
}

const S_L_EPS: f64 = 1e-15;

/// Local consistency in the open interval (0, 1).
pub fn local_consistency(
    t_tokens: &[Vec<f64>],
    c_tokens: &[Vec<f64>],
    params: &LocalXAttnParams,
) -> Result<f64, ConsistencyError> {
    let pooled = cross_attend(t_tokens, c_tokens, params)?;
    Ok(sigmoid(dot(&params.w, &pooled) + params.b).clamp(S_L_EPS, 1.0 - S_L_EPS))
}

/// Fits the readout `(w, b)` by logistic regression on pooled attention
/// outputs of labeled (text tokens, claim tokens, faithful?) examples. The
/// projections stay fixed.
pub fn fit_local_readout(
    params: &LocalXAttnParams,
    examples: &[(Vec<Vec<f64>>, Vec<Vec<f64>>, bool)],
    lr: f64,
    epochs: usize,
) -> Result<LocalXAttnParams, ConsistencyError> {
    let pooled: Vec<(Vec<f64>, f64)> = examples
        .iter()
        .map(|(t, c, y)| Ok((cross_attend(t, c, params)?, if *y { 1.0 } else { 0.0 })))
        .collect::<Result<_, ConsistencyError>>()?;
    let mut out = params.clone();
    let n = pooled.len().max(1) as f64;
    for _ in 0..epochs {
        let mut gw = vec![0.0; out.w.len()];
        let mut gb = 0.0;
        for (x, y) in &pooled {
            let g = sigmoid(dot(&out.w, x) + out.b) - y;
            gw.iter_mut().zip(x).for_each(|(a, xi)| *a += g * xi);
            gb += g;
        }
        out.w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= lr * g / n);
        out.b -= lr * gb / n;
    }
    Ok(out)
}

/// Logistic judge over `[s_g, s_l]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeParams {
    pub weights: [f64; 2],
    pub bias: f64,
    pub threshold: f64,
}

impl Default for JudgeParams {
    fn default() -> Self {
        Self {
            weights: [6.0, 6.0],
            bias: -9.0,
            threshold: 0.5,
        }
    }
}

impl JudgeParams {
    pub fn probability(&self, s: &ConsistencyScores) -> f64 {
        sigmoid(self.weights[0] * s.s_g + self.weights[1] * s.s_l + self.bias)
    }

    pub fn accepts(&self, s: &ConsistencyScores) -> bool {
        self.probability(s) >= self.threshold
    }

    /// The common value both scores must reach to pass when they are equal.
    pub fn score_floor(&self) -> Option<f64> {
        let t = self.threshold;
        let total = self.weights[0] + self.weights[1];
        if !(0.0 < t && t < 1.0) || total == 0.0 {
            return None;
        }
        Some(((t / (1.0 - t)).ln() - self.bias) / total)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConsistencyError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ConsistencyError::Params(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ConsistencyError::Params(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConsistencyError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConsistencyError::Params(e.to_string()))?;
        let p: Self = serde_json::from_str(&text).map_err(|e| ConsistencyError::Params(e.to_string()))?;
        if !(0.0 < p.threshold && p.threshold < 1.0) {
            return Err(ConsistencyError::Params(format!("threshold {} outside (0, 1)", p.threshold)));
        }
        Ok(p)
    }
}

/// Logistic regression of faithful (true) vs unfaithful extractions on
/// `[s_g, s_l]`, full-batch gradient descent from the default params.
pub fn fit_judge(samples: &[(ConsistencyScores, bool)], lr: f64, iterations: usize) -> JudgeParams {
    let mut p = JudgeParams::default();
    let n = samples.len().max(1) as f64;
    for _ in 0..iterations {
        let (mut g0, mut g1, mut gb) = (0.0, 0.0, 0.0);
        for (s, y) in samples {
            let g = p.probability(s) - if *y { 1.0 } else { 0.0 };
            g0 += g * s.s_g;
            g1 += g * s.s_l;
            gb += g;
        }
        p.weights[0] -= lr * g0 / n;
        p.weights[1] -= lr * g1 / n;
        p.bias -= lr * gb / n;
    }
    p
}

/// Decides whether an extraction is faithful. `round` counts correction
/// rounds already spent on the current sample.
pub trait Judge: Send + Sync {
    fn accept(&self, scores: &ConsistencyScores, round: u32) -> bool;

    /// Score level reported in the diagnostic message.
    fn floor(&self) -> Option<f64> {
        None
    }
}

impl Judge for JudgeParams {
    fn accept(&self, scores: &ConsistencyScores, _round: u32) -> bool {
        self.accepts(scores)
    }

    fn floor(&self) -> Option<f64> {
        self.score_floor()
    }
}

/// Verdict by round, repeating the last entry; for experiments and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedJudge(pub Vec<bool>);

impl Judge for ScriptedJudge {
    fn accept(&self, _scores: &ConsistencyScores, round: u32) -> bool {
        let i = (round as usize).min(self.0.len().saturating_sub(1));
        self.0.get(i).copied().unwrap_or(true)
    }
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

pub fn error_message(scores: Option<&ConsistencyScores>, floor: Option<f64>) -> String {
    format!(
        "extraction rejected: S_g={} (min {}), S_l={} (min {}); regenerate claims preserving the original meaning of the text.",
        fmt_score(scores.map(|s| s.s_g)),
        fmt_score(floor),
        fmt_score(scores.map(|s| s.s_l)),
        fmt_score(floor),
    )
}

/// Lowercased whitespace tokens with surrounding punctuation removed,
/// capped at `max`. Falls back to the trimmed text as a single token.
pub fn word_tokens(text: &str, max: usize) -> Vec<String> {
    let tokens: Vec<String> = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .take(max.max(1))
        .collect();
    if tokens.is_empty() && !text.trim().is_empty() {
        return vec![text.trim().to_string()];
    }
    tokens
}

fn token_vectors(
    session: &mut Session,
    text: &str,
    max: usize,
    purpose: &str,
) -> Result<Vec<Vec<f64>>, ConsistencyError> {
    let tokens = word_tokens(text, max);
    if tokens.is_empty() {
        return Err(ConsistencyError::EmptyTokens);
    }
    Ok(session
        .embed_text_batch(EmbedRole::Sentence, &tokens, purpose)?
        .into_iter()
        .map(|v| v.values)
        .collect())
}

/// Scores one claim set against the text. `text_vec` and `text_tokens` are
/// the sentence embedding and word-token embeddings of the text.
pub fn score_claims(
    session: &mut Session,
    text_vec: &EmbeddingVector,
    text_tokens: &[Vec<f64>],
    claims: &ClaimSet,
    local: &LocalXAttnParams,
    max_local_tokens: usize,
) -> Result<ConsistencyScores, ConsistencyError> {
    let joined = claims.joined();
    let c_vec = session.embed_text(EmbedRole::Sentence, &joined, "consistency_claims")?;
    let s_g = global_consistency(&text_vec.values, &c_vec.values)?;
    let c_tokens = token_vectors(session, &joined, max_local_tokens, "consistency_claim_tokens")?;
    let s_l = local_consistency(text_tokens, &c_tokens, local)?;
    Ok(ConsistencyScores { s_g, s_l })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionState {
    pub round: u32,
    pub last_error_msg: String,
    /// Every scored (or unparseable, `None`) candidate in order.
    pub history: Vec<(Option<ClaimSet>, Option<ConsistencyScores>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub claims: ClaimSet,
    pub state: CorrectionState,
    pub decisions: Vec<StageDecision>,
    pub flags: Vec<String>,
}

fn decision(action: Action, scores: Option<&ConsistencyScores>) -> StageDecision {
    let d = StageDecision::new(Stage::Consistency, action).expect("consistency actions are always valid");
    match scores {
        Some(s) => d.with_score("s_g", s.s_g).with_score("s_l", s.s_l),
        None => d,
    }
}

/// Everything the loop needs besides the session and the sample.
pub struct ConsistencyContext<'a> {
    pub config: &'a PipelineConfig,
    pub judge: &'a dyn Judge,
    pub local: &'a LocalXAttnParams,
    /// Sentence embedding of the text, when already computed.
    pub text_vec: Option<&'a EmbeddingVector>,
}

/// Scores `initial`, regenerating rejected claims for at most `tau` rounds
/// and falling back to a one-claim summary. `initial = None` means the
/// extraction produced nothing usable.
pub fn reflect_and_correct(
    session: &mut Session,
    item: &NewsItem,
    initial: Option<ClaimSet>,
    ctx: &ConsistencyContext,
) -> Result<CorrectionOutcome, ConsistencyError> {
    let config = ctx.config;
    let text_vec = match ctx.text_vec {
        Some(v) => v.clone(),
        None => session.embed_text(EmbedRole::Sentence, &item.text, "embed_text")?,
    };
    let mut text_tokens: Option<Vec<Vec<f64>>> = None;
    let mut state = CorrectionState::default();
    let mut decisions = Vec::new();
    let mut out_flags = Vec::new();
    let mut current = initial;

    loop {
        let scores = match &current {
            Some(c) => {
                if text_tokens.is_none() {
                    text_tokens = Some(token_vectors(
                        session,
                        &item.text,
                        config.max_local_tokens,
                        "consistency_text_tokens",
                    )?);
                }
                let tokens = text_tokens.as_deref().unwrap_or_default();
                Some(score_claims(session, &text_vec, tokens, c, ctx.local, config.max_local_tokens)?)
            }
            None => None,
        };
        let accepted = scores.as_ref().is_some_and(|s| ctx.judge.accept(s, state.round));
        state.history.push((current.clone(), scores));
        if accepted {
            decisions.push(decision(Action::Proceed, scores.as_ref()));
            let claims = current.expect("accepted claims exist");
            return Ok(CorrectionOutcome {
                claims,
                state,
                decisions,
                flags: out_flags,
            });
        }
        let msg = error_message(scores.as_ref(), ctx.judge.floor());
        state.last_error_msg = msg.clone();

        if state.round >= config.tau {
            decisions.push(decision(Action::Fallback, scores.as_ref()));
            let summary = session.llm(
                PromptId::Summarize,
                vars([("text", item.text.clone())]),
                config.max_context_tokens,
                "summarize",
            )?;
            let line = summary.split_whitespace().collect::<Vec<_>>().join(" ");
            let claim = Claim::new(line, ClaimCategory::General).map_err(|_| ConsistencyError::EmptyFallback)?;
            let claims = ClaimSet::new(vec![claim], ClaimOrigin::Fallback).map_err(|_| ConsistencyError::EmptyFallback)?;
            return Ok(CorrectionOutcome {
                claims,
                state,
                decisions,
                flags: out_flags,
            });
        }

        decisions.push(decision(Action::Retry, scores.as_ref()));
        state.round += 1;
        let previous = current.as_ref().map(ClaimSet::to_lines).unwrap_or_default();
        let completion = session.llm(
            PromptId::Correct,
            vars([("text", item.text.clone()), ("claims", previous), ("error", msg)]),
            config.max_context_tokens,
            "correct",
        );
        current = match completion {
            Ok(text) => match claims_from_completion(
                session,
                &text,
                ClaimOrigin::Corrected { round: state.round },
                config.max_claims,
            ) {
                Ok(parsed) => {
                    out_flags.extend(parsed.flags());
                    Some(parsed.claims)
                }
                Err(e) => {
                    log::debug!("{}: correction round {} unusable: {e}", item.id, state.round);
                    None
                }
            },
            Err(e) => {
                log::warn!("{}: correction round {} failed: {e}", item.id, state.round);
                None
            }
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{mock_provider_set, MockFixtures, MockOptions};
    use crate::providers::{PromptSet, ProviderSet};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use veracity_mathcheck::reference_attention;

    fn random_tokens(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn random_params(rng: &mut ChaCha8Rng, a: usize, d: usize) -> LocalXAttnParams {
        let mut m = || Matrix::from_fn(a, d, |_, _| rng.random_range(-0.5..0.5));
        let (w_q, w_k, w_v) = (m(), m(), m());
        LocalXAttnParams {
            w_q,
            w_k,
            w_v,
            w: (0..a).map(|_| rng.random_range(-1.0..1.0)).collect(),
            b: rng.random_range(-1.0..1.0),
        }
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -0.2, 0.9];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((global_consistency(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((global_consistency(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(global_consistency(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(global_consistency(&[0.0, 0.0], &[0.0, 1.0]), Err(ConsistencyError::ZeroVector));
    }

    #[test]
    fn local_score_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tokens(&mut rng, 4, 8);
        let p0 = LocalXAttnParams::untrained(8, 0.0);
        assert_eq!(local_consistency(&t, &t, &p0).unwrap(), 0.5);
        let p20 = LocalXAttnParams::untrained(8, 20.0);
        assert!(local_consistency(&t, &t, &p20).unwrap() > 0.999);
        assert!(matches!(
            local_consistency(&t, &random_tokens(&mut rng, 2, 5), &p0),
            Err(ConsistencyError::DimensionMismatch(_))
        ));
        assert_eq!(local_consistency(&[], &t, &p0), Err(ConsistencyError::EmptyTokens));
    }

    #[test]
    fn local_score_matches_reference_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let params = random_params(&mut rng, 8, 8);
        let t = random_tokens(&mut rng, 5, 8);
        let c = random_tokens(&mut rng, 5, 8);
        let q: Vec<Vec<f64>> = c.iter().map(|x| params.w_q.matvec(x)).collect();
        let k: Vec<Vec<f64>> = t.iter().map(|x| params.w_k.matvec(x)).collect();
        let v: Vec<Vec<f64>> = t.iter().map(|x| params.w_v.matvec(x)).collect();
        let out = reference_attention(&q, &k, &v, 1.0 / 8f64.sqrt()).unwrap();
        let mut pooled = vec![0.0; 8];
        for row in &out {
            for (p, x) in pooled.iter_mut().zip(row) {
                *p += x / out.len() as f64;
            }
        }
        let logit: f64 = params.w.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>() + params.b;
        let expected = 1.0 / (1.0 + (-logit).exp());
        let got = local_consistency(&t, &c, &params).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn judge_examples() {
        let zero = JudgeParams {
            weights: [0.0, 0.0],
            bias: 0.0,
            threshold: 0.5,
        };
        assert!(zero.accepts(&ConsistencyScores { s_g: -1.0, s_l: 0.0 }));
        let d = JudgeParams::default();
        assert!(d.accepts(&ConsistencyScores { s_g: 0.9, s_l: 0.9 }));
        assert!(!d.accepts(&ConsistencyScores { s_g: 0.5, s_l: 0.5 }));
        assert!((d.score_floor().unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn error_message_format() {
        let msg = error_message(Some(&ConsistencyScores { s_g: 0.41, s_l: 0.7311 }), Some(0.75));
        assert_eq!(
            msg,
            "extraction rejected: S_g=0.410 (min 0.750), S_l=0.731 (min 0.750); regenerate claims preserving the original meaning of the text."
        );
    }

    #[test]
    fn judge_and_local_params_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let j = JudgeParams {
            weights: [1.5, -2.0],
            bias: 0.25,
            threshold: 0.6,
        };
        j.save(&dir.path().join("judge.json")).unwrap();
        assert_eq!(JudgeParams::load(&dir.path().join("judge.json")).unwrap(), j);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 4, 6);
        p.save(&dir.path().join("local.json")).unwrap();
        assert_eq!(LocalXAttnParams::load(&dir.path().join("local.json")).unwrap(), p);
    }

    #[test]
    fn judge_fitting_separates() {
        let mut samples = Vec::new();
        for i in 0..50 {
            let x = i as f64 / 50.0;
            samples.push((ConsistencyScores { s_g: 0.8 + 0.2 * x, s_l: 0.7 }, true));
            samples.push((ConsistencyScores { s_g: 0.1 + 0.3 * x, s_l: 0.7 }, false));
        }
        let p = fit_judge(&samples, 1.0, 3000);
        let correct = samples.iter().filter(|(s, y)| p.accepts(s) == *y).count();
        assert_eq!(correct, samples.len());
    }

    #[test]
    fn readout_fitting_learns_a_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = LocalXAttnParams::untrained(4, 0.0);
        let mut examples = Vec::new();
        for i in 0..40 {
            let good = i % 2 == 0;
            let mut t = random_tokens(&mut rng, 3, 4);
            for tok in &mut t {
                tok[0] = if good { 1.0 } else { -1.0 };
            }
            let c = t.clone();
            examples.push((t, c, good));
        }
        let fitted = fit_local_readout(&base, &examples, 1.0, 300).unwrap();
        for (t, c, y) in &examples {
            let s = local_consistency(t, c, &fitted).unwrap();
            assert_eq!(s >= 0.5, *y);
        }
    }

    fn fixture() -> (ProviderSet, NewsItem) {
        let p = mock_provider_set(MockFixtures::default(), MockOptions::new(4, 16, 16)).unwrap();
        (p, NewsItem::new("n", "Floods hit the valley. Roads closed.", "x.img", None).unwrap())
    }

    fn initial() -> ClaimSet {
        ClaimSet::new(
            vec![Claim::new("Floods hit the valley.", ClaimCategory::General).unwrap()],
            ClaimOrigin::Extracted,
        )
        .unwrap()
    }

    fn run(judge: &dyn Judge, tau: u32, start: Option<ClaimSet>) -> (CorrectionOutcome, Vec<String>) {
        let (p, item) = fixture();
        let prompts = PromptSet::builtin();
        let mut s = Session::new(&p, &prompts, 0.4);
        let mut cfg = PipelineConfig::compact(16);
        cfg.tau = tau;
        let local = LocalXAttnParams::untrained(16, 1.0);
        let ctx = ConsistencyContext {
            config: &cfg,
            judge,
            local: &local,
            text_vec: None,
        };
        let out = reflect_and_correct(&mut s, &item, start, &ctx).unwrap();
        let purposes = s.calls().iter().map(|c| c.purpose.clone()).collect();
        (out, purposes)
    }

    fn count(purposes: &[String], p: &str) -> usize {
        purposes.iter().filter(|x| *x == p).count()
    }

    #[test]
    fn accepting_judge_returns_initial() {
        let (out, calls) = run(&ScriptedJudge(vec![true]), 2, Some(initial()));
        assert_eq!(out.claims, initial());
        assert_eq!(count(&calls, "correct"), 0);
        assert_eq!(out.decisions.len(), 1);
    }

    #[test]
    fn rejecting_judge_falls_back_after_tau() {
        let (out, calls) = run(&ScriptedJudge(vec![false]), 2, Some(initial()));
        assert_eq!(count(&calls, "correct"), 2);
        assert_eq!(count(&calls, "summarize"), 1);
        assert_eq!(out.claims.origin, ClaimOrigin::Fallback);
        assert_eq!(out.claims.claims[0].category, ClaimCategory::General);
        assert_eq!(out.claims.claims[0].statement, "Floods hit the valley.");
        let actions: Vec<Action> = out.decisions.iter().map(|d| d.action).collect();
        assert_eq!(actions, [Action::Retry, Action::Retry, Action::Fallback]);
        assert!(out.state.last_error_msg.starts_with("extraction rejected: S_g="));
    }

    #[test]
    fn one_correction_then_accept() {
        let (out, calls) = run(&ScriptedJudge(vec![false, true]), 2, Some(initial()));
        assert_eq!(count(&calls, "correct"), 1);
        assert_eq!(out.claims.origin, ClaimOrigin::Corrected { round: 1 });
    }

    #[test]
    fn tau_bounds_the_loop() {
        let judge = ScriptedJudge(vec![false, false, true]);
        assert_eq!(run(&judge, 1, Some(initial())).0.claims.origin, ClaimOrigin::Fallback);
        assert_eq!(run(&judge, 2, Some(initial())).0.claims.origin, ClaimOrigin::Corrected { round: 2 });
        let (out, calls) = run(&ScriptedJudge(vec![false]), 0, Some(initial()));
        assert_eq!(count(&calls, "correct"), 0);
        assert_eq!(out.claims.origin, ClaimOrigin::Fallback);
    }

    #[test]
    fn missing_extraction_enters_the_loop() {
        let (out, calls) = run(&JudgeParams::default(), 2, None);
        assert_eq!(count(&calls, "correct"), 2);
        assert_eq!(out.claims.origin, ClaimOrigin::Fallback);
        assert!(out.state.history[0].1.is_none());
    }

    #[test]
    fn default_judge_accepts_a_verbatim_extraction() {
        let (p, item) = fixture();
        let prompts = PromptSet::builtin();
        let mut s = Session::new(&p, &prompts, 0.4);
        let cfg = PipelineConfig::compact(16);
        let local = LocalXAttnParams::untrained(16, 1.0);
        let claims = ClaimSet::new(
            vec![
                Claim::new("Floods hit the valley.", ClaimCategory::General).unwrap(),
                Claim::new("Roads closed.", ClaimCategory::General).unwrap(),
            ],
            ClaimOrigin::Extracted,
        )
        .unwrap();
        let judge = JudgeParams::default();
        let ctx = ConsistencyContext {
            config: &cfg,
            judge: &judge,
            local: &local,
            text_vec: None,
        };
        let out = reflect_and_correct(&mut s, &item, Some(claims.clone()), &ctx).unwrap();
        assert_eq!(out.claims, claims);
        let scores = out.state.history[0].1.unwrap();
        assert!((scores.s_g - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_free(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
            k in 0.1f64..10.0,
        ) {
            prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
            let g = global_consistency(&a, &b).unwrap();
            prop_assert!((g - global_consistency(&b, &a).unwrap()).abs() <= 1e-12);
            let scaled: Vec<f64> = b.iter().map(|x| x * k).collect();
            prop_assert!((g - global_consistency(&a, &scaled).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn local_score_strictly_inside_unit_interval(seed in 0u64..10_000, n in 1usize..6, m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = random_params(&mut rng, 4, 6);
            let t = random_tokens(&mut rng, n, 6);
            let c = random_tokens(&mut rng, m, 6);
            let s = local_consistency(&t, &c, &params).unwrap();
            prop_assert!(s > 0.0 && s < 1.0);
        }

        #[test]
        fn fallback_is_total(verdicts in proptest::collection::vec(any::<bool>(), 1..5), tau in 0u32..4) {
            let (out, calls) = run(&ScriptedJudge(verdicts), tau, Some(initial()));
            prop_assert!(!out.claims.is_empty());
            prop_assert!(count(&calls, "correct") <= tau as usize);
            prop_assert!(count(&calls, "summarize") <= 1);
        }
    }
}
