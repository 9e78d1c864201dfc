//! Prompt templates with `{{name}}` placeholders.
//!
//! Templates ship as text assets under `prompts/` and are compiled in; a
//! directory of same-named files overrides them at runtime. Lines starting
//! with `#!` are header metadata and are not rendered.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ProviderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    Extract,
    Auth,
    Contra,
    Correct,
    ReExtract,
    Summarize,
    Consolidate,
    CategorizeClaim,
}

impl PromptId {
    pub const ALL: [PromptId; 8] = [
        PromptId::Extract,
        PromptId::Auth,
        PromptId::Contra,
        PromptId::Correct,
        PromptId::ReExtract,
        PromptId::Summarize,
        PromptId::Consolidate,
        PromptId::CategorizeClaim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptId::Extract => "extract",
            PromptId::Auth => "auth",
            PromptId::Contra => "contra",
            PromptId::Correct => "correct",
            PromptId::ReExtract => "re_extract",
            PromptId::Summarize => "summarize",
            PromptId::Consolidate => "consolidate",
            PromptId::CategorizeClaim => "categorize_claim",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            PromptId::CategorizeClaim => "categorize.txt",
            PromptId::Extract => "extract.txt",
            PromptId::Auth => "auth.txt",
            PromptId::Contra => "contra.txt",
            PromptId::Correct => "correct.txt",
            PromptId::ReExtract => "re_extract.txt",
            PromptId::Summarize => "summarize.txt",
            PromptId::Consolidate => "consolidate.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptId::Extract => include_str!("../../prompts/extract.txt"),
            PromptId::Auth => include_str!("../../prompts/auth.txt"),
            PromptId::Contra => include_str!("../../prompts/contra.txt"),
            PromptId::Correct => include_str!("../../prompts/correct.txt"),
            PromptId::ReExtract => include_str!("../../prompts/re_extract.txt"),
            PromptId::Summarize => include_str!("../../prompts/summarize.txt"),
            PromptId::Consolidate => include_str!("../../prompts/consolidate.txt"),
            PromptId::CategorizeClaim => include_str!("../../prompts/categorize.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub version: String,
    body: String,
}

impl Template {
    pub fn parse(source: &str) -> Self {
        let mut version = String::from("unversioned");
        let mut body = Vec::new();
        for line in source.lines() {
            if let Some(meta) = line.strip_prefix("#!") {
                if let Some(v) = meta.trim().strip_prefix("version:") {
                    version = v.trim().to_string();
                }
                continue;
            }
            body.push(line);
        }
        Self {
            version,
            body: body.join("\n").trim_end().to_string(),
        }
    }

    /// Placeholder names referenced by the template.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    names.insert(after[..end].trim().to_string());
                    rest = &after[end + 2..];
                }
                None => break,
            }
        }
        names
    }

    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<String, ProviderError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                out.push_str(&rest[start..]);
                rest = "";
                break;
            };
            let name = after[..end].trim();
            let value = vars
                .get(name)
                .ok_or_else(|| ProviderError::MissingVariable(name.to_string()))?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    templates: BTreeMap<PromptId, Template>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            templates: PromptId::ALL
                .into_iter()
                .map(|id| (id, Template::parse(id.builtin())))
                .collect(),
        }
    }

    /// Built-in templates, overridden by any same-named files in `dir`.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::builtin();
        for id in PromptId::ALL {
            let path = dir.join(id.file_name());
            if path.exists() {
                set.templates
                    .insert(id, Template::parse(&std::fs::read_to_string(path)?));
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: PromptId) -> &Template {
        &self.templates[&id]
    }

    pub fn render(&self, id: PromptId, vars: &BTreeMap<String, String>) -> Result<String, ProviderError> {
        self.get(id).render(vars)
    }
}

/// Provider-agnostic token estimate: `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}
