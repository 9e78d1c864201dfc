//! Corpus ingestion, evaluation metrics, cost accounting and
//! hyperparameter sweeps.

pub mod synthetic;

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError, SampleErrorKind};
use crate::item::{ClaimOrigin, NewsItem};
use crate::providers::cache::{cached_provider_set, CacheStore};
use crate::trace::PipelineTrace;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus has no usable items")]
    EmptyCorpus,
    #[error("duplicate id `{id}` on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("sample `{0}` has no label")]
    Unlabeled(String),
    #[error("nothing to evaluate")]
    NoPredictions,
    #[error("grid must be non-empty and sorted ascending")]
    BadGrid,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing output: {0}")]
    Output(String),
}

/// A corpus line that could not be turned into a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub items: Vec<NewsItem>,
    pub issues: Vec<IngestIssue>,
}

/// Parses JSON-lines text. Malformed lines are collected, not fatal;
/// repeated ids are.
pub fn parse_corpus(text: &str) -> Result<Corpus, HarnessError> {
    let mut items = Vec::new();
    let mut issues = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: NewsItem = match serde_json::from_str(line) {
            Ok(item) => item,
            Err(e) => {
                issues.push(IngestIssue {
                    line: line_no,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if let Err(e) = item.validate() {
            issues.push(IngestIssue {
                line: line_no,
                message: e.to_string(),
            });
            continue;
        }
        if let Some(&first) = seen.get(&item.id) {
            return Err(HarnessError::DuplicateId {
                id: item.id,
                first_line: first,
                second_line: line_no,
            });
        }
        seen.insert(item.id.clone(), line_no);
        items.push(item);
    }
    if items.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    Ok(Corpus { items, issues })
}

pub fn ingest_corpus(path: &Path) -> Result<Corpus, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let corpus = parse_corpus(&text)?;
    for issue in &corpus.issues {
        log::warn!("{}:{}: skipped: {}", path.display(), issue.line, issue.message);
    }
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub verdict: u8,
    pub label: u8,
}

/// Counts with fake (label 1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut c = Confusion::default();
        for (verdict, label) in pairs {
            match (verdict, label) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same counts with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub f1_fake: f64,
    pub f1_real: f64,
    /// Absent when only one class is present.
    pub auc: Option<f64>,
    pub confusion: Confusion,
    #[serde(default)]
    pub flags: Vec<String>,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    let denom = 2 * tp + fp + fn_;
    (denom > 0).then(|| (2 * tp) as f64 / denom as f64)
}

/// Accuracy and both F1 scores from counts. A class with no labeled
/// samples gets F1 = 0 and a flag.
pub fn metrics_from_confusion(c: Confusion) -> (f64, f64, f64, Vec<String>) {
    let mut flags = Vec::new();
    let n = c.n();
    let accuracy = if n == 0 { 0.0 } else { (c.tp + c.tn) as f64 / n as f64 };
    if c.tp + c.fn_ == 0 {
        flags.push("f1_fake_absent".to_string());
    }
    if c.tn + c.fp == 0 {
        flags.push("f1_real_absent".to_string());
    }
    let f1_fake = f1(c.tp, c.fp, c.fn_).unwrap_or(0.0);
    let f1_real = f1(c.tn, c.fn_, c.fp).unwrap_or(0.0);
    (accuracy, f1_fake, f1_real, flags)
}

/// Probability that a random positive outscores a random negative, ties
/// worth one half, via the Mann-Whitney rank sum with mid-ranks.
pub fn auc_rank(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|p| (*p, true)).chain(neg.iter().map(|n| (*n, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let positives = all[i..=j].iter().filter(|x| x.1).count();
        rank_sum += mid * positives as f64;
        i = j + 1;
    }
    let np = pos.len();
    let u = rank_sum - (np * (np + 1)) as f64 / 2.0;
    Some(u / (np * neg.len()) as f64)
}

pub fn evaluate(predictions: &[Prediction]) -> Result<EvalReport, HarnessError> {
    if predictions.is_empty() {
        return Err(HarnessError::NoPredictions);
    }
    let confusion = Confusion::from_pairs(predictions.iter().map(|p| (p.verdict, p.label)));
    let (accuracy, f1_fake, f1_real, mut flags) = metrics_from_confusion(confusion);
    let pos: Vec<f64> = predictions.iter().filter(|p| p.label == 1).map(|p| p.probability).collect();
    let neg: Vec<f64> = predictions.iter().filter(|p| p.label != 1).map(|p| p.probability).collect();
    let auc = auc_rank(&pos, &neg);
    if auc.is_none() {
        flags.push("auc_undefined".to_string());
    }
    Ok(EvalReport {
        n: predictions.len(),
        accuracy,
        f1_fake,
        f1_real,
        auc,
        confusion,
        flags,
    })
}

/// Predictions from completed traces. Errored traces are skipped; a
/// completed trace without a label is an error.
pub fn predictions_from_traces(traces: &[PipelineTrace]) -> Result<Vec<Prediction>, HarnessError> {
    let mut out = Vec::new();
    for t in traces {
        let (Some(probability), Some(verdict)) = (t.prediction, t.verdict) else {
            continue;
        };
        let label = t.label.ok_or_else(|| HarnessError::Unlabeled(t.item_id.clone()))?;
        out.push(Prediction {
            probability,
            verdict,
            label,
        });
    }
    Ok(out)
}

/// Applies labels from a corpus to traces by id. Returns how many traces
/// received a label.
pub fn attach_labels(traces: &mut [PipelineTrace], labels: &[NewsItem]) -> usize {
    let by_id: HashMap<&str, u8> = labels
        .iter()
        .filter_map(|i| i.label.map(|l| (i.id.as_str(), l)))
        .collect();
    let mut n = 0;
    for t in traces {
        if let Some(l) = by_id.get(t.item_id.as_str()) {
            t.label = Some(*l);
            n += 1;
        }
    }
    n
}

/// How samples are counted as API calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallModel {
    /// Calls every sample pays.
    pub base_calls_per_sample: f64,
    /// Extra calls for a sample that goes through forensics.
    pub forensic_calls_per_sample: f64,
}

impl Default for CallModel {
    fn default() -> Self {
        Self {
            base_calls_per_sample: 1.0,
            forensic_calls_per_sample: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub n: usize,
    /// Mean calls per sample under the call model.
    pub avg_api_calls: f64,
    /// `base + (1 - skip_rate) * forensic`.
    pub expected_api_calls: f64,
    /// Mean number of recorded provider calls, each counted separately.
    pub avg_provider_calls: f64,
    pub avg_tokens_k: f64,
    pub avg_latency_s: f64,
    pub skip_rate: f64,
    pub errored: usize,
    pub call_model: CallModel,
}

fn reached_forensics(t: &PipelineTrace) -> bool {
    t.forensic_passes() > 0
}

pub fn cost_account(traces: &[PipelineTrace], model: CallModel) -> Result<CostReport, HarnessError> {
    if traces.is_empty() {
        return Err(HarnessError::NoPredictions);
    }
    let n = traces.len() as f64;
    let skips = traces.iter().filter(|t| t.skipped_forensics()).count();
    let skip_rate = skips as f64 / n;
    let calls: f64 = traces
        .iter()
        .map(|t| {
            model.base_calls_per_sample
                + if reached_forensics(t) {
                    model.forensic_calls_per_sample
                } else {
                    0.0
                }
        })
        .sum();
    Ok(CostReport {
        n: traces.len(),
        avg_api_calls: calls / n,
        expected_api_calls: model.base_calls_per_sample + (1.0 - skip_rate) * model.forensic_calls_per_sample,
        avg_provider_calls: traces.iter().map(|t| t.provider_calls.len()).sum::<usize>() as f64 / n,
        avg_tokens_k: traces.iter().map(|t| t.total_tokens).sum::<u64>() as f64 / n / 1000.0,
        avg_latency_s: traces.iter().map(|t| t.wall_ms()).sum::<u64>() as f64 / n / 1000.0,
        skip_rate,
        errored: traces.iter().filter(|t| t.error.is_some()).count(),
        call_model: model,
    })
}

/// Runs every item, `jobs` at a time. Output order follows input order.
pub fn run_corpus(engine: &Engine, items: &[NewsItem], jobs: usize) -> Vec<PipelineTrace> {
    if jobs <= 1 {
        return items.iter().map(|i| engine.run(i)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(|i| engine.run(i)).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            items.iter().map(|i| engine.run(i)).collect()
        }
    }
}

/// Number of traces aborted by provider failures.
pub fn provider_failures(traces: &[PipelineTrace]) -> usize {
    traces
        .iter()
        .filter(|t| SampleErrorKind::of_trace(t) == Some(SampleErrorKind::Provider))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Accuracy,
    F1Fake,
    F1Real,
    Auc,
}

impl Objective {
    pub fn of(self, r: &EvalReport) -> Option<f64> {
        match self {
            Objective::Accuracy => Some(r.accuracy),
            Objective::F1Fake => Some(r.f1_fake),
            Objective::F1Real => Some(r.f1_real),
            Objective::Auc => r.auc,
        }
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "accuracy" | "acc" => Ok(Objective::Accuracy),
            "f1_fake" => Ok(Objective::F1Fake),
            "f1_real" => Ok(Objective::F1Real),
            "auc" => Ok(Objective::Auc),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub beta: f64,
    pub metric: Option<f64>,
    pub skip_rate: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_beta: f64,
    pub objective: Objective,
    pub rows: Vec<GridRow>,
}

fn labeled(items: &[NewsItem]) -> Result<(), HarnessError> {
    match items.iter().find(|i| i.label.is_none()) {
        Some(i) => Err(HarnessError::Unlabeled(i.id.clone())),
        None => Ok(()),
    }
}

/// Evaluates the pipeline once per gate threshold and keeps the best one;
/// ties go to the smaller threshold. Provider outputs go through `cache`,
/// so only the gate and what follows it cost anything after the first value.
pub fn grid_search_beta(
    engine: &Engine,
    items: &[NewsItem],
    grid: &[f64],
    objective: Objective,
    cache: &Arc<CacheStore>,
    jobs: usize,
) -> Result<GridSearchResult, HarnessError> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(HarnessError::BadGrid);
    }
    labeled(items)?;
    let providers = cached_provider_set(&engine.providers, Arc::clone(cache));
    let mut rows = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &beta in grid {
        let config = crate::config::PipelineConfig {
            beta,
            ..engine.config.clone()
        };
        let variant = engine.variant(config, providers.clone())?;
        let traces = run_corpus(&variant, items, jobs);
        let report = evaluate(&predictions_from_traces(&traces)?)?;
        let metric = objective.of(&report);
        let score = metric.unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((beta, score));
        }
        let skip_rate = traces.iter().filter(|t| t.skipped_forensics()).count() as f64 / traces.len() as f64;
        log::info!("beta {beta}: {objective:?} = {metric:?}, skip rate {skip_rate:.3}");
        rows.push(GridRow {
            beta,
            metric,
            skip_rate,
            report,
        });
    }
    Ok(GridSearchResult {
        best_beta: best.map(|b| b.0).expect("grid is non-empty"),
        objective,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub tau: u32,
    pub report: EvalReport,
    /// Largest number of Correct calls in any one trace.
    pub max_correct_calls: usize,
    pub total_correct_calls: usize,
    /// Samples whose final claims came from the summary fallback.
    pub fallbacks: usize,
}

/// Re-runs the pipeline for each correction budget. No selection.
pub fn sweep_tau(
    engine: &Engine,
    items: &[NewsItem],
    taus: &[u32],
    cache: &Arc<CacheStore>,
    jobs: usize,
) -> Result<Vec<TauRow>, HarnessError> {
    labeled(items)?;
    let providers = cached_provider_set(&engine.providers, Arc::clone(cache));
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let config = crate::config::PipelineConfig {
            tau,
            ..engine.config.clone()
        };
        let variant = engine.variant(config, providers.clone())?;
        let traces = run_corpus(&variant, items, jobs);
        let report = evaluate(&predictions_from_traces(&traces)?)?;
        let counts: Vec<usize> = traces.iter().map(|t| t.calls_for("correct")).collect();
        rows.push(TauRow {
            tau,
            report,
            max_correct_calls: counts.iter().copied().max().unwrap_or(0),
            total_correct_calls: counts.iter().sum(),
            fallbacks: traces
                .iter()
                .filter(|t| t.claims.as_ref().is_some_and(|c| c.origin == ClaimOrigin::Fallback))
                .count(),
        });
    }
    Ok(rows)
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn report_fields(r: &EvalReport) -> Vec<String> {
    vec![
        r.n.to_string(),
        r.accuracy.to_string(),
        r.f1_fake.to_string(),
        r.f1_real.to_string(),
        opt(r.auc),
        r.confusion.tp.to_string(),
        r.confusion.fp.to_string(),
        r.confusion.tn.to_string(),
        r.confusion.fn_.to_string(),
    ]
}

const REPORT_HEADER: [&str; 9] = ["n", "accuracy", "f1_fake", "f1_real", "auc", "tp", "fp", "tn", "fn"];

pub fn eval_csv(r: &EvalReport) -> String {
    csv_string(&REPORT_HEADER, vec![report_fields(r)])
}

pub fn cost_csv(c: &CostReport) -> String {
    csv_string(
        &[
            "n",
            "avg_api_calls",
            "expected_api_calls",
            "avg_provider_calls",
            "avg_tokens_k",
            "avg_latency_s",
            "skip_rate",
            "errored",
        ],
        vec![vec![
            c.n.to_string(),
            c.avg_api_calls.to_string(),
            c.expected_api_calls.to_string(),
            c.avg_provider_calls.to_string(),
            c.avg_tokens_k.to_string(),
            c.avg_latency_s.to_string(),
            c.skip_rate.to_string(),
            c.errored.to_string(),
        ]],
    )
}

pub fn grid_csv(g: &GridSearchResult) -> String {
    let mut header = vec!["beta", "metric", "skip_rate"];
    header.extend(REPORT_HEADER);
    let rows = g
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.beta.to_string(), opt(r.metric), r.skip_rate.to_string()];
            row.extend(report_fields(&r.report));
            row
        })
        .collect();
    csv_string(&header, rows)
}

pub fn tau_csv(rows: &[TauRow]) -> String {
    let mut header = vec!["tau", "max_correct_calls", "total_correct_calls", "fallbacks"];
    header.extend(REPORT_HEADER);
    let rows = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.tau.to_string(),
                r.max_correct_calls.to_string(),
                r.total_correct_calls.to_string(),
                r.fallbacks.to_string(),
            ];
            row.extend(report_fields(&r.report));
            row
        })
        .collect();
    csv_string(&header, rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Output(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

/// Writes `text`, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    let fail = |e: std::io::Error| HarnessError::Output(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    std::fs::write(path, text).map_err(fail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use veracity_mathcheck::auc_bruteforce;

    fn pred(p: f64, label: u8) -> Prediction {
        Prediction {
            probability: p,
            verdict: u8::from(p >= 0.5),
            label,
        }
    }

    #[test]
    fn ingest_examples() {
        let ok = r#"{"id":"a","text":"one","image":"a.jpg","label":1}
{"id":"b","text":"two","image":"b.jpg"}
{"id":"c","text":"three","image":"c.jpg","label":0}"#;
        assert_eq!(parse_corpus(ok).unwrap().items.len(), 3);

        let missing = "{\"id\":\"a\",\"text\":\"one\",\"image\":\"a.jpg\"}\n{\"id\":\"b\",\"image\":\"b.jpg\"}\n";
        let c = parse_corpus(missing).unwrap();
        assert_eq!(c.items.len(), 1);
        assert_eq!(c.issues.len(), 1);
        assert_eq!(c.issues[0].line, 2);

        let dup = "{\"id\":\"a\",\"text\":\"x\",\"image\":\"i\"}\n\n{\"id\":\"a\",\"text\":\"y\",\"image\":\"i\"}\n";
        match parse_corpus(dup) {
            Err(HarnessError::DuplicateId {
                id,
                first_line,
                second_line,
            }) => assert_eq!((id.as_str(), first_line, second_line), ("a", 1, 3)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_corpus("not json\n"), Err(HarnessError::EmptyCorpus)));
        let bad_label = "{\"id\":\"a\",\"text\":\"x\",\"image\":\"i\",\"label\":2}\n{\"id\":\"b\",\"text\":\"x\",\"image\":\"i\"}";
        assert_eq!(parse_corpus(bad_label).unwrap().issues.len(), 1);
    }

    #[test]
    fn perfect_predictions() {
        let preds: Vec<Prediction> = (0..10).map(|i| pred(if i % 2 == 0 { 0.9 } else { 0.1 }, u8::from(i % 2 == 0))).collect();
        let r = evaluate(&preds).unwrap();
        assert_eq!((r.accuracy, r.f1_fake, r.f1_real, r.auc), (1.0, 1.0, 1.0, Some(1.0)));
    }

    #[test]
    fn auc_example() {
        let preds = [pred(0.9, 1), pred(0.8, 0), pred(0.7, 1), pred(0.1, 0)];
        assert_eq!(evaluate(&preds).unwrap().auc, Some(0.75));
    }

    #[test]
    fn single_class_has_no_auc() {
        let r = evaluate(&[pred(0.9, 1), pred(0.2, 1)]).unwrap();
        assert_eq!(r.auc, None);
        assert!(r.flags.contains(&"auc_undefined".to_string()));
        assert!(r.flags.contains(&"f1_real_absent".to_string()));
        assert_eq!(r.f1_real, 0.0);
    }

    #[test]
    fn objective_parsing() {
        assert_eq!("F1-fake".parse::<Objective>(), Ok(Objective::F1Fake));
        assert_eq!("acc".parse::<Objective>(), Ok(Objective::Accuracy));
        assert!("precision".parse::<Objective>().is_err());
    }

    #[test]
    fn csv_shapes() {
        let r = evaluate(&[pred(0.9, 1), pred(0.2, 0)]).unwrap();
        let text = eval_csv(&r);
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("n,accuracy,f1_fake,f1_real,auc,tp,fp,tn,fn"));
    }

    #[test]
    fn cost_regimes() {
        let all_skip = synthetic::gate_traces(100, 1.0, 3);
        let none_skip = synthetic::gate_traces(100, 0.0, 3);
        let m = CallModel::default();
        assert_eq!(cost_account(&all_skip, m).unwrap().avg_api_calls, 1.0);
        assert_eq!(cost_account(&none_skip, m).unwrap().avg_api_calls, 2.0);
        let mixed = cost_account(&synthetic::gate_traces(1000, 0.7, 3), m).unwrap();
        assert!((mixed.skip_rate - 0.7).abs() < 1e-12);
        assert!((mixed.avg_api_calls - mixed.expected_api_calls).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rank_auc_equals_all_pairs(
            pos in proptest::collection::vec(0u8..20, 1..60),
            neg in proptest::collection::vec(0u8..20, 1..60),
        ) {
            let pos: Vec<f64> = pos.iter().map(|x| f64::from(*x) / 20.0).collect();
            let neg: Vec<f64> = neg.iter().map(|x| f64::from(*x) / 20.0).collect();
            prop_assert_eq!(auc_rank(&pos, &neg).unwrap(), auc_bruteforce(&pos, &neg));
        }

        #[test]
        fn label_swap_symmetry(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
            let c = Confusion { tp, fp, tn, fn_ };
            prop_assume!(c.n() > 0);
            let (acc, f_fake, f_real, _) = metrics_from_confusion(c);
            let (acc2, f_fake2, f_real2, _) = metrics_from_confusion(c.swapped());
            prop_assert_eq!(acc, acc2);
            prop_assert_eq!(f_fake, f_real2);
            prop_assert_eq!(f_real, f_fake2);
            prop_assert!((0.0..=1.0).contains(&f_fake) && (0.0..=1.0).contains(&f_real));
        }
    }
}
