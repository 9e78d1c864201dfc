//! Staged multimodal news verification.
//!
//! A sample (text plus image) goes through linguistic analysis, a
//! consistency check on the extracted claims with bounded self-correction,
//! an image/claim alignment gate, optional tool-based visual forensics with
//! rollback, and a mask-aware attention fusion head. Every decision and
//! provider call lands in a [`trace::PipelineTrace`].

pub mod alignment;
pub mod config;
pub mod consistency;
pub mod engine;
pub mod forensics;
pub mod fusion;
pub mod harness;
pub mod item;
pub mod linalg;
pub mod linguistic;
pub mod providers;
pub mod trace;

pub use config::{ConfigFile, FusionDims, PipelineConfig};
pub use engine::{decide_gate_action, run_pipeline, Engine, EngineError, GateAction};
pub use item::{Claim, ClaimCategory, ClaimOrigin, ClaimSet, NewsItem};
pub use trace::PipelineTrace;
