//! Per-sample audit record: every stage decision, provider call and the
//! payload handed to the fusion head.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::AlignmentReport;
use crate::forensics::EvidenceBundle;
use crate::item::ClaimSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Linguistic,
    Consistency,
    AlignmentGate,
    Forensics,
    Fusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Proceed,
    SkipForensics,
    Retry,
    Fallback,
    Rollback,
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("action {action:?} is not valid at stage {stage:?}")]
    InvalidAction { stage: Stage, action: Action },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDecision {
    pub stage: Stage,
    pub action: Action,
    pub scores: BTreeMap<String, f64>,
}

impl StageDecision {
    pub fn new(stage: Stage, action: Action) -> Result<Self, TraceError> {
        let ok = match action {
            Action::SkipForensics => stage == Stage::AlignmentGate,
            Action::Rollback => stage == Stage::Forensics,
            _ => true,
        };
        if !ok {
            return Err(TraceError::InvalidAction { stage, action });
        }
        Ok(Self {
            stage,
            action,
            scores: BTreeMap::new(),
        })
    }

    pub fn with_score(mut self, name: &str, value: f64) -> Self {
        self.scores.insert(name.to_string(), value);
        self
    }
}

/// One logical provider call (retries folded into `attempts`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderCall {
    pub provider: String,
    pub purpose: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub wall_ms: u64,
    pub attempts: u32,
    pub ok: bool,
    #[serde(default)]
    pub cached: bool,
}

/// Flag names recorded in [`PipelineTrace::flags`].
pub mod flags {
    pub const CLAIMS_TRUNCATED: &str = "claims_truncated";
    pub const EXTRACTION_EMPTY: &str = "extraction_empty";
    pub const DEGRADED_AUTH: &str = "degraded_auth";
    pub const DEGRADED_CONTRA: &str = "degraded_contra";
    pub const CATEGORY_FALLBACK: &str = "category_fallback";
    pub const REFUTATION_UNRESOLVED: &str = "refutation_unresolved";
    pub const REFUTATION_UNAVAILABLE: &str = "refutation_unavailable";
    pub const REEXTRACT_FAILED: &str = "reextract_failed";
    pub const FORENSICS_DEGRADED: &str = "forensics_degraded";
    pub const CONSOLIDATE_FALLBACK: &str = "consolidate_fallback";
    pub const TOOL_FAILED_PREFIX: &str = "tool_failed:";
}

/// What the fusion head saw and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRecord {
    pub masks: [u8; 4],
    pub alpha: [f64; 4],
    pub mu: [f64; 4],
    pub y_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub item_id: String,
    pub seed: u64,
    pub decisions: Vec<StageDecision>,
    pub provider_calls: Vec<ProviderCall>,
    pub total_tokens: u64,
    pub flags: BTreeSet<String>,
    pub claims: Option<ClaimSet>,
    pub alignment: Option<AlignmentReport>,
    pub evidence: Option<EvidenceBundle>,
    pub fusion: Option<FusionRecord>,
    pub prediction: Option<f64>,
    pub verdict: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub error: Option<String>,
}

impl PipelineTrace {
    pub fn new(item_id: impl Into<String>, seed: u64) -> Self {
        Self {
            item_id: item_id.into(),
            seed,
            decisions: Vec::new(),
            provider_calls: Vec::new(),
            total_tokens: 0,
            flags: BTreeSet::new(),
            claims: None,
            alignment: None,
            evidence: None,
            fusion: None,
            prediction: None,
            verdict: None,
            label: None,
            error: None,
        }
    }

    pub fn decide(&mut self, decision: StageDecision) {
        self.decisions.push(decision);
    }

    pub fn flag(&mut self, name: impl Into<String>) {
        self.flags.insert(name.into());
    }

    pub fn has_flag(&self, name: &str) -> bool {
        self.flags.contains(name)
    }

    pub fn extend_calls(&mut self, calls: impl IntoIterator<Item = ProviderCall>) {
        for c in calls {
            self.total_tokens += c.tokens_in + c.tokens_out;
            self.provider_calls.push(c);
        }
    }

    pub fn skipped_forensics(&self) -> bool {
        self.decisions
            .iter()
            .any(|d| d.stage == Stage::AlignmentGate && d.action == Action::SkipForensics)
    }

    pub fn forensic_passes(&self) -> usize {
        self.decisions.iter().filter(|d| d.stage == Stage::Forensics).count()
    }

    pub fn rollbacks(&self) -> usize {
        self.decisions
            .iter()
            .filter(|d| d.stage == Stage::Forensics && d.action == Action::Rollback)
            .count()
    }

    /// Calls whose purpose equals `purpose`.
    pub fn calls_for(&self, purpose: &str) -> usize {
        self.provider_calls.iter().filter(|c| c.purpose == purpose).count()
    }

    pub fn token_sum(&self) -> u64 {
        self.provider_calls.iter().map(|c| c.tokens_in + c.tokens_out).sum()
    }

    pub fn wall_ms(&self) -> u64 {
        self.provider_calls.iter().map(|c| c.wall_ms).sum()
    }

    /// Checks the stage grammar
    /// `Linguistic Consistency+ AlignmentGate (Forensics (Consistency+ Forensics)*)? Fusion`
    /// allowing a trace to stop early when it errored.
    pub fn stage_order_is_valid(&self) -> bool {
        let stages: Vec<Stage> = self.decisions.iter().map(|d| d.stage).collect();
        let complete = self.error.is_none();
        let mut i = 0;
        let at = |i: usize| stages.get(i).copied();

        if at(i) != Some(Stage::Linguistic) {
            return !complete && stages.is_empty();
        }
        i += 1;
        let start = i;
        while at(i) == Some(Stage::Consistency) {
            i += 1;
        }
        if i == start {
            return !complete && at(i).is_none();
        }
        match at(i) {
            Some(Stage::AlignmentGate) => i += 1,
            None => return !complete,
            _ => return false,
        }
        let gate_skipped = self.decisions[i - 1].action == Action::SkipForensics;
        if !gate_skipped {
            loop {
                match at(i) {
                    Some(Stage::Forensics) => {
                        let rolled = self.decisions[i].action == Action::Rollback;
                        i += 1;
                        if !rolled {
                            break;
                        }
                        let start = i;
                        while at(i) == Some(Stage::Consistency) {
                            i += 1;
                        }
                        if i == start {
                            return !complete && at(i).is_none();
                        }
                    }
                    None => return !complete,
                    _ => return false,
                }
            }
        }
        match at(i) {
            Some(Stage::Fusion) => i + 1 == stages.len(),
            None => !complete,
            _ => false,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn file_name(item_id: &str) -> String {
        let safe: String = item_id
            .chars()
            .map(|c| if matches!(c, '/' | '\\' | '\0') { '_' } else { c })
            .collect();
        format!("{safe}.trace.json")
    }

    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(Self::file_name(&self.item_id));
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Reads every `*.trace.json` in `dir`, sorted by file name.
    pub fn read_dir(dir: &Path) -> std::io::Result<Vec<Self>> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".trace.json"))
            .collect();
        paths.sort();
        paths.iter().map(|p| Self::read(p)).collect()
    }
}
