//! Generated data for experiments that do not need a real corpus: separable
//! feature banks, traces with a chosen gate skip rate, and mock corpora with
//! engineered alignment scores.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use std::path::Path;

use crate::config::{ConfigFile, FusionDims, PipelineConfig};
use crate::fusion::{FeatureBank, FusionParams, LabeledBank};
use crate::item::NewsItem;
use crate::providers::mock::MockFixtures;
use crate::providers::{EmbedRole, PromptId, ToolKind};
use crate::trace::{Action, FusionRecord, PipelineTrace, ProviderCall, Stage, StageDecision};

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let v: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Banks whose text branch carries the label along a hidden direction with
/// margin at least `0.3`. The other present branches lean the same way more
/// weakly (`0.3` against noise of `0.2` per coordinate), and the visual
/// branch is missing half the time.
pub fn separable_banks(n: usize, d: usize, seed: u64) -> Vec<LabeledBank> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = unit(&mut rng, d);
    let noise = Normal::new(0.0, 0.15).expect("valid normal");
    let branch_noise = Normal::new(0.0, 0.2).expect("valid normal");
    (0..n)
        .map(|i| {
            let label = u8::from(rng.random_bool(0.5));
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let f_t = loop {
                let v: Vec<f64> = direction.iter().map(|u| sign * 0.6 * u + noise.sample(&mut rng)).collect();
                let proj: f64 = v.iter().zip(&direction).map(|(a, b)| a * b).sum();
                if sign * proj >= 0.3 {
                    break v;
                }
            };
            let visual = rng.random_bool(0.5);
            let mut other = || {
                direction
                    .iter()
                    .map(|u| sign * 0.3 * u + branch_noise.sample(&mut rng))
                    .collect::<Vec<f64>>()
            };
            let f_h = other();
            let f_r = other();
            let f_v = if visual { other() } else { vec![0.0; d] };
            LabeledBank {
                id: Some(format!("bank-{i:05}")),
                bank: FeatureBank::new([f_t, f_h, f_r, f_v], [1, 1, 1, u8::from(visual)]).expect("valid bank"),
                label,
            }
        })
        .collect()
}

fn call(purpose: &str, tokens_in: u64, tokens_out: u64) -> ProviderCall {
    ProviderCall {
        provider: "synthetic".into(),
        purpose: purpose.into(),
        tokens_in,
        tokens_out,
        wall_ms: 30 + tokens_in / 20 + 2 * tokens_out,
        attempts: 1,
        ok: true,
        cached: false,
    }
}

/// Exactly `round(n * skip_rate)` of the `n` samples are marked as
/// positions to skip, in shuffled order.
fn skip_pattern(n: usize, skip_rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let skips = ((n as f64) * skip_rate.clamp(0.0, 1.0)).round() as usize;
    let mut pattern: Vec<bool> = (0..n).map(|i| i < skips).collect();
    pattern.shuffle(rng);
    pattern
}

/// Structurally valid traces without running any stage; the gate skips on
/// exactly `round(n * skip_rate)` of them.
pub fn gate_traces(n: usize, skip_rate: f64, seed: u64) -> Vec<PipelineTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern = skip_pattern(n, skip_rate, &mut rng);
    pattern
        .into_iter()
        .enumerate()
        .map(|(i, skip)| {
            let mut t = PipelineTrace::new(format!("syn-{i:05}"), seed);
            let d = |s, a| StageDecision::new(s, a).expect("valid");
            t.decide(d(Stage::Linguistic, Action::Proceed));
            t.decide(d(Stage::Consistency, Action::Proceed));
            let mut calls = vec![
                call("extract", rng.random_range(80..200), rng.random_range(20..60)),
                call("auth", rng.random_range(80..200), rng.random_range(20..60)),
                call("contra", rng.random_range(80..200), rng.random_range(20..60)),
            ];
            if skip {
                t.decide(d(Stage::AlignmentGate, Action::SkipForensics).with_score("s_inter", 0.6));
            } else {
                t.decide(d(Stage::AlignmentGate, Action::Proceed).with_score("s_inter", 0.1));
                t.decide(d(Stage::Forensics, Action::Proceed));
                calls.push(call("consolidate", rng.random_range(150..400), rng.random_range(20..60)));
            }
            t.decide(d(Stage::Fusion, Action::Proceed));
            t.extend_calls(calls);
            let y = rng.random_range(0.0..1.0);
            t.fusion = Some(FusionRecord {
                masks: [1, 1, 1, u8::from(!skip)],
                alpha: [0.25; 4],
                mu: [0.5; 4],
                y_hat: y,
            });
            t.prediction = Some(y);
            t.verdict = Some(u8::from(y >= 0.5));
            t
        })
        .collect()
}

fn joint_pair(fixtures: &mut MockFixtures, claim: &str, image: &str, s_inter: f64) {
    fixtures.joint_image(image, &[1.0, 0.0]);
    fixtures.joint_text(claim, &[s_inter, (1.0 - s_inter * s_inter).max(0.0).sqrt()]);
}

fn one_sentence(i: usize) -> String {
    format!("Report {i} describes a public event in district {}.", i % 17)
}

/// Items with one-sentence texts whose claim aligns with its image at or
/// above `beta + margin` for exactly `round(n * skip_rate)` items and below
/// `beta - margin` for the rest.
pub fn gate_corpus(n: usize, skip_rate: f64, beta: f64, seed: u64) -> (Vec<NewsItem>, MockFixtures) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern = skip_pattern(n, skip_rate, &mut rng);
    let margin = 0.02;
    let mut fixtures = MockFixtures::default();
    let items = pattern
        .into_iter()
        .enumerate()
        .map(|(i, skip)| {
            let text = one_sentence(i);
            let image = format!("img-{i:05}.jpg");
            let s = if skip {
                rng.random_range((beta + margin).min(1.0)..=1.0)
            } else {
                rng.random_range(-0.2..(beta - margin).max(-0.19))
            };
            joint_pair(&mut fixtures, &text, &image, s);
            NewsItem::new(format!("g{i:05}"), text, image, Some(u8::from(!skip))).expect("valid item")
        })
        .collect();
    (items, fixtures)
}

/// A labeled mock corpus on which forensics is needed exactly for the
/// misaligned fakes, plus fusion parameters that call a sample fake iff a
/// visual evidence branch is present.
#[derive(Debug, Clone)]
pub struct EngineeredCorpus {
    pub items: Vec<NewsItem>,
    pub fixtures: MockFixtures,
    pub fusion: FusionParams,
    pub config: PipelineConfig,
}

/// Consolidated summary every forensic pass in [`gate_search_corpus`] yields.
pub const ENGINEERED_SUMMARY: &str = "visual evidence does not support the claims";

/// Fakes have alignment in `[0.05, 0.28]`, reals in `[0.30, 0.39]`. With
/// the returned fusion head a sample is called fake iff forensics ran, so
/// accuracy is highest for a gate threshold between the two bands.
pub fn gate_search_corpus(n_fake: usize, n_real: usize, dim: usize, seed: u64) -> EngineeredCorpus {
    assert!(dim >= 4, "need room for four basis directions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = |k: usize| {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        v
    };
    let mut fixtures = MockFixtures::default();
    fixtures.llm_when(PromptId::Consolidate, &[], ENGINEERED_SUMMARY);
    fixtures.text_vector(Some(EmbedRole::Sentence), ENGINEERED_SUMMARY, &basis(0));

    let mut items = Vec::with_capacity(n_fake + n_real);
    for i in 0..n_fake + n_real {
        let fake = i < n_fake;
        let text = one_sentence(i);
        let image = format!("eng-{i:04}.jpg");
        let s = if fake {
            rng.random_range(0.05..=0.28)
        } else {
            rng.random_range(0.30..=0.39)
        };
        joint_pair(&mut fixtures, &text, &image, s);
        fixtures.text_vector(Some(EmbedRole::Sentence), &text, &basis(1));
        fixtures.text_vector(Some(EmbedRole::Sentence), &format!("Style analysis: {text}"), &basis(2));
        fixtures.text_vector(Some(EmbedRole::Sentence), &format!("Logic analysis: {text}"), &basis(3));
        items.push(NewsItem::new(format!("e{i:04}"), text, image, Some(u8::from(fake))).expect("valid item"));
    }
    items.shuffle(&mut rng);

    let config = PipelineConfig {
        seed,
        ..PipelineConfig::compact(dim)
    };
    let fusion = evidence_probe_head(config.fusion_dims);
    EngineeredCorpus {
        items,
        fixtures,
        fusion,
        config,
    }
}

/// Hand-set fusion head: uniform attention, constant reliability, and only
/// coordinate 0 of each branch reaches the classifier. With every other
/// branch orthogonal to that coordinate, `y_hat = sigmoid(-1) < 0.5` without
/// visual evidence and `sigmoid(1.5) > 0.5` when evidence along coordinate 0
/// is present.
pub fn evidence_probe_head(dims: FusionDims) -> FusionParams {
    let mut fusion = FusionParams::zeros(dims);
    fusion.w_v.set(0, 0, 10.0);
    fusion.w_c[0] = 2.0;
    fusion.b_c = -1.0;
    fusion
}

/// One worked example: text, image, label, how well claim and image align,
/// the category the analyst assigns, and what each vision tool would report.
struct Case {
    id: &'static str,
    text: &'static str,
    image: &'static str,
    label: u8,
    s_inter: f64,
    category: &'static str,
    tools: &'static [(ToolKind, &'static [&'static str])],
}

const CASES: [Case; 3] = [
    Case {
        id: "case1",
        text: "Host Andy Cohen interviews actresses Jane Fonda and Lily Tomlin.",
        image: "case1_talk_show.jpg",
        label: 0,
        s_inter: 0.82,
        category: "ActivityInteraction",
        tools: &[
            (ToolKind::ImageCaptioning, &["Andy Cohen interviews guests on his show"]),
            (ToolKind::ImageTagging, &["Talk show", "Interview", "TV Host"]),
        ],
    },
    Case {
        id: "case2",
        text: "Kate Middleton joins Meghan Markle for Christmas service.",
        image: "case2_royals.jpg",
        label: 0,
        s_inter: 0.74,
        category: "ActivityInteraction",
        tools: &[
            (ToolKind::ImageCaptioning, &["Royal family members walk side by side"]),
            (ToolKind::DenseCaptioning, &["Two women wearing hats and coats walking"]),
        ],
    },
    Case {
        id: "case3",
        text: "Brad Pitt attends the annual Golden Globe Awards.",
        image: "case3_athletes.jpg",
        label: 1,
        s_inter: 0.12,
        category: "ExplicitAttribute",
        tools: &[
            (ToolKind::Ocr, &["TEAM USA"]),
            (ToolKind::DenseCaptioning, &["Smiling people wearing white sports jackets"]),
            (ToolKind::ImageTagging, &["Sports", "Olympics", "Team USA"]),
        ],
    },
];

/// What the consolidation step reports for the third case.
pub const CASE_STUDY_SUMMARY: &str = "OCR reads TEAM USA on the scarves and the tags say Sports and Olympics; \
the scene is an Olympic team event, not the Golden Globe Awards.";

#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub items: Vec<NewsItem>,
    pub fixtures: MockFixtures,
    pub config: PipelineConfig,
    pub fusion: FusionParams,
}

/// Three labeled samples: two whose claims match their images and one whose
/// image contradicts its claim, with mock fixtures for every provider and
/// the [`evidence_probe_head`] fusion head.
pub fn case_study() -> CaseStudy {
    const DIM: usize = 16;
    let basis = |k: usize| {
        let mut v = vec![0.0; DIM];
        v[k] = 1.0;
        v
    };
    let config = PipelineConfig {
        seed: 42,
        ..PipelineConfig::compact(DIM)
    };
    let mut f = MockFixtures::default();
    let mut items = Vec::new();
    for case in &CASES {
        joint_pair(&mut f, case.text, case.image, case.s_inter);
        f.llm_when(PromptId::CategorizeClaim, &[("claim", case.text)], case.category);
        f.text_vector(Some(EmbedRole::Sentence), case.text, &basis(1));
        f.text_vector(Some(EmbedRole::Sentence), &format!("Style analysis: {}", case.text), &basis(2));
        f.text_vector(Some(EmbedRole::Sentence), &format!("Logic analysis: {}", case.text), &basis(3));
        for (tool, lines) in case.tools {
            f.vision(*tool, case.image, lines);
        }
        items.push(NewsItem::new(case.id, case.text, case.image, Some(case.label)).expect("valid case"));
    }
    // The evidence for the third case points away from its claim.
    f.text_vector(Some(EmbedRole::Claim), CASES[2].text, &basis(4));
    f.text_vector(Some(EmbedRole::Claim), "TEAM USA Sports Olympics Team USA", &basis(5));
    f.llm_when(PromptId::Consolidate, &[], CASE_STUDY_SUMMARY);
    f.text_vector(Some(EmbedRole::Sentence), CASE_STUDY_SUMMARY, &basis(0));
    CaseStudy {
        items,
        fixtures: f,
        fusion: evidence_probe_head(config.fusion_dims),
        config,
    }
}

/// Writes a case study as `corpus.jsonl`, `config.txt`, `fusion_params.json`
/// and `mock/fixtures.json` under `dir`.
pub fn write_case_study(study: &CaseStudy, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir.join("mock"))?;
    let corpus: Vec<String> = study
        .items
        .iter()
        .map(|i| serde_json::to_string(i).expect("item serializes"))
        .collect();
    std::fs::write(dir.join("corpus.jsonl"), corpus.join("\n") + "\n")?;
    std::fs::write(dir.join("config.txt"), ConfigFile::render_pipeline(&study.config) + "\n")?;
    std::fs::write(dir.join("fusion_params.json"), study.fusion.to_json() + "\n")?;
    let fixtures = serde_json::to_string_pretty(&study.fixtures).expect("fixtures serialize");
    std::fs::write(dir.join("mock").join("fixtures.json"), fixtures + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banks_are_valid_and_balanced() {
        let banks = separable_banks(400, 8, 1);
        let fakes = banks.iter().filter(|b| b.label == 1).count();
        assert!((150..250).contains(&fakes));
        assert!(banks.iter().all(|b| b.bank.validate().is_ok()));
        assert_eq!(banks, separable_banks(400, 8, 1));
    }

    #[test]
    fn gate_traces_hit_the_rate() {
        let t = gate_traces(1000, 0.7, 2);
        assert_eq!(t.iter().filter(|t| t.skipped_forensics()).count(), 700);
        assert!(t.iter().all(|t| t.stage_order_is_valid()));
        assert!(t.iter().all(|t| t.total_tokens == t.token_sum()));
    }

    #[test]
    fn gate_corpus_labels_follow_pattern() {
        let (items, _) = gate_corpus(50, 0.6, 0.29, 3);
        assert_eq!(items.iter().filter(|i| i.label == Some(0)).count(), 30);
    }

    #[test]
    fn case_study_replays() {
        use crate::engine::Engine;
        use crate::providers::mock::{mock_provider_set, MockOptions};
        use crate::trace::flags;

        let study = case_study();
        let opts = MockOptions::new(study.config.seed, 16, 16);
        let providers = mock_provider_set(study.fixtures.clone(), opts).unwrap();
        let engine = Engine::new(study.config.clone(), providers, study.fusion.clone()).unwrap();
        let traces: Vec<_> = study.items.iter().map(|i| engine.run(i)).collect();
        for t in &traces[..2] {
            assert!(t.skipped_forensics(), "{}", t.item_id);
            assert_eq!(t.verdict, Some(0));
            assert!(!t.has_flag(flags::CATEGORY_FALLBACK));
            assert!(t.provider_calls.iter().all(|c| !c.purpose.starts_with("tool")));
        }
        let t = &traces[2];
        assert_eq!(t.error, None);
        assert_eq!(t.verdict, Some(1));
        assert!(t.forensic_passes() >= 1);
        assert_eq!(t.rollbacks(), 1);
        assert!(t.has_flag(flags::REFUTATION_UNRESOLVED));
        let ev = t.evidence.as_ref().unwrap();
        let tools: Vec<ToolKind> = ev.items.iter().map(|i| i.tool).collect();
        assert!(tools.contains(&ToolKind::Ocr) && tools.contains(&ToolKind::ImageTagging));
        assert!(!tools.contains(&ToolKind::DenseCaptioning));
        assert!(ev.items.iter().any(|i| i.content.contains("TEAM USA")));
        assert_eq!(ev.consolidated_summary, CASE_STUDY_SUMMARY);
    }

    #[test]
    fn case_study_bundle_is_current() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/case_study");
        let tmp = tempfile::tempdir().unwrap();
        write_case_study(&case_study(), tmp.path()).unwrap();
        for f in ["corpus.jsonl", "config.txt", "fusion_params.json", "mock/fixtures.json"] {
            let want = std::fs::read_to_string(tmp.path().join(f)).unwrap();
            let got = std::fs::read_to_string(dir.join(f)).unwrap_or_default();
            assert_eq!(got, want, "{f} is stale; rerun the case_study_fixtures example");
        }
    }
}
