//! News items and the atomic claims extracted from them.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ItemError {
    #[error("news item `{0}` has empty text")]
    EmptyText(String),
    #[error("claim statement is empty")]
    EmptyClaim,
    #[error("claim statement contains a newline")]
    MultilineClaim,
    #[error("claim set is empty")]
    EmptyClaimSet,
    #[error("label must be 0 or 1, got {0}")]
    BadLabel(i64),
}

/// One text+image sample. `label` is 1 for fake, 0 for real.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub text: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

impl NewsItem {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        image: impl Into<String>,
        label: Option<u8>,
    ) -> Result<Self, ItemError> {
        let item = Self {
            id: id.into(),
            text: text.into(),
            image: image.into(),
            label,
        };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<(), ItemError> {
        if self.text.trim().is_empty() {
            return Err(ItemError::EmptyText(self.id.clone()));
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(ItemError::BadLabel(l as i64));
            }
        }
        Ok(())
    }
}

/// Semantic category of a claim; drives vision tool routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClaimCategory {
    ExplicitAttribute,
    ActivityInteraction,
    EntityCentric,
    General,
}

impl ClaimCategory {
    pub const ALL: [ClaimCategory; 4] = [
        ClaimCategory::ExplicitAttribute,
        ClaimCategory::ActivityInteraction,
        ClaimCategory::EntityCentric,
        ClaimCategory::General,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClaimCategory::ExplicitAttribute => "ExplicitAttribute",
            ClaimCategory::ActivityInteraction => "ActivityInteraction",
            ClaimCategory::EntityCentric => "EntityCentric",
            ClaimCategory::General => "General",
        }
    }

    /// Lenient parse of an LLM categorization answer. Accepts the exact
    /// names, snake/space-separated variants and surrounding prose as long
    /// as exactly one category is mentioned.
    pub fn parse_loose(answer: &str) -> Option<Self> {
        let squashed: String = answer
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let mut found = Self::ALL
            .into_iter()
            .filter(|c| squashed.contains(&c.name().to_ascii_lowercase()));
        match (found.next(), found.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for ClaimCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub statement: String,
    pub category: ClaimCategory,
}

impl Claim {
    pub fn new(statement: impl Into<String>, category: ClaimCategory) -> Result<Self, ItemError> {
        let statement = statement.into();
        if statement.trim().is_empty() {
            return Err(ItemError::EmptyClaim);
        }
        if statement.contains('\n') || statement.contains('\r') {
            return Err(ItemError::MultilineClaim);
        }
        Ok(Self {
            statement,
            category,
        })
    }
}

/// Where a claim set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClaimOrigin {
    Extracted,
    Corrected { round: u32 },
    Fallback,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSet {
    pub claims: Vec<Claim>,
    pub origin: ClaimOrigin,
}

impl ClaimSet {
    pub fn new(claims: Vec<Claim>, origin: ClaimOrigin) -> Result<Self, ItemError> {
        if claims.is_empty() {
            return Err(ItemError::EmptyClaimSet);
        }
        Ok(Self { claims, origin })
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn statements(&self) -> impl Iterator<Item = &str> {
        self.claims.iter().map(|c| c.statement.as_str())
    }

    /// Claims joined by single spaces, the form embedded for global scoring.
    pub fn joined(&self) -> String {
        self.statements().collect::<Vec<_>>().join(" ")
    }

    /// Numbered one-claim-per-line rendering used in prompts.
    pub fn to_lines(&self) -> String {
        format_claim_lines(self.statements())
    }
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:\d+[.)]|[-*•])\s+").expect("valid regex"))
}

/// Parses an LLM claim listing: one claim per line, with an optional
/// numbered (`1.`, `2)`) or bulleted (`-`, `*`, `•`) marker. Blank lines
/// are dropped.
pub fn parse_claim_lines(completion: &str) -> Vec<String> {
    completion
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| marker_regex().replace(l, "").trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn format_claim_lines<'a>(statements: impl IntoIterator<Item = &'a str>) -> String {
    statements
        .into_iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Splits prose into sentences on `.`, `!` or `?` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\n' || c == '\r' {
            current.push(' ');
            continue;
        }
        current.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().map_or(true, |n| n.is_whitespace()) {
            let s = current.trim().to_string();
            if !s.is_empty() {
                out.push(s);
            }
            current.clear();
        }
    }
    let s = current.trim().to_string();
    if !s.is_empty() {
        out.push(s);
    }
    out
}
