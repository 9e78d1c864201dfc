//! `veracity`: command-line front end for the detection pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use veracity_core::config::{ConfigFile, PipelineConfig};
use veracity_core::engine::Engine;
use veracity_core::fusion::{self, init_params, read_banks, FusionParams, TrainConfig};
use veracity_core::harness::{self, CallModel, Objective};
use veracity_core::providers::cache::{cached_provider_set, CacheStore};
use veracity_core::providers::http::http_provider_set;
use veracity_core::providers::mock::{mock_provider_set, MockFixtures, MockOptions};
use veracity_core::providers::{ProviderSet, RetryPolicy};
use veracity_core::{NewsItem, PipelineTrace};

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Provider(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Provider(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Provider(m) => m,
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Data(format!("{context}: {e}"))
}

#[derive(Parser, Debug)]
#[command(name = "veracity", version, about = "Multimodal misinformation detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the pipeline over a corpus and write traces and reports.
    Run(RunArgs),
    /// Train the fusion head on precomputed feature banks.
    TrainFusion(TrainArgs),
    /// Score a directory of traces against labels.
    Eval(EvalArgs),
    /// Pick the gate threshold that maximizes an objective.
    GridSearch(GridArgs),
    /// Re-run the pipeline for several correction budgets.
    SweepTau(SweepArgs),
    /// Print one trace in readable form.
    Trace(TraceArgs),
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Key-value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of mock fixture JSON files; switches every provider to mock mode.
    #[arg(long)]
    mock_fixtures: Option<PathBuf>,
    /// Trained fusion head; a seeded untrained head is used otherwise.
    #[arg(long)]
    fusion_params: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Config overrides as KEY=VALUE, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Directory for the on-disk provider cache.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Fraction of samples allowed to fail on provider errors before exit code 3.
    #[arg(long, default_value_t = 0.1)]
    error_budget: f64,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: PathBuf,
    /// Calls per sample as BASE,FORENSIC for the cost report.
    #[arg(long, default_value = "1,1")]
    calls: String,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    banks: PathBuf,
    /// Where to write the trained parameters.
    #[arg(long)]
    out: PathBuf,
    /// Config file supplying the fusion dimensions.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Learning curve CSV; defaults to `<out>.curve.csv`.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    traces: PathBuf,
    /// Corpus file whose labels are attached to the traces.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory for `eval.json`, `eval.csv`, `cost.json`, `cost.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "1,1")]
    calls: String,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Ascending comma-separated thresholds.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value = "accuracy")]
    objective: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Comma-separated correction budgets.
    #[arg(long)]
    values: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long)]
    id: String,
    /// Directory holding the traces (or a `run` output directory).
    #[arg(long)]
    out: PathBuf,
    /// Print the raw JSON document instead of the summary.
    #[arg(long)]
    json: bool,
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> CliResult<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| Failure::Usage(format!("--{flag}: `{x}`: {e}"))))
        .collect()
}

fn call_model(s: &str) -> CliResult<CallModel> {
    match parse_list::<f64>("calls", s)?.as_slice() {
        &[base, forensic] => Ok(CallModel {
            base_calls_per_sample: base,
            forensic_calls_per_sample: forensic,
        }),
        _ => Err(Failure::Usage("--calls takes BASE,FORENSIC".into())),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> CliResult<ConfigFile> {
    let mut cfg = match path {
        Some(p) => ConfigFile::load(p).map_err(data(p.display()))?,
        None => ConfigFile::default(),
    };
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| Failure::Usage(format!("--set {kv}: {e}")))?;
    }
    if let Some(s) = seed {
        cfg.pipeline.seed = s;
    }
    cfg.pipeline.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn providers(args: &PipelineArgs, cfg: &ConfigFile) -> CliResult<ProviderSet> {
    let p = &cfg.pipeline;
    let set = match &args.mock_fixtures {
        Some(dir) => {
            let fixtures = MockFixtures::load_dir(dir).map_err(data(dir.display()))?;
            mock_provider_set(fixtures, MockOptions::new(p.seed, p.feature_dim_text, p.feature_dim_joint))
                .map_err(data("mock fixtures"))?
        }
        None => {
            let retry = RetryPolicy {
                attempts: p.provider_attempts,
                backoff_ms: p.retry_backoff_ms,
                deterministic_timing: false,
            };
            http_provider_set(&cfg.endpoints, p.feature_dim_text, p.feature_dim_joint, retry)
                .map_err(data("providers"))?
        }
    };
    Ok(match &args.cache {
        Some(dir) => {
            let store = CacheStore::on_disk(dir).map_err(data(dir.display()))?;
            cached_provider_set(&set, Arc::new(store))
        }
        None => set,
    })
}

fn build(args: &PipelineArgs) -> CliResult<(Engine, Vec<NewsItem>)> {
    let cfg = load_config(args.config.as_deref(), args.seed, &args.overrides)?;
    let items = harness::ingest_corpus(&args.corpus)
        .map_err(data(args.corpus.display()))?
        .items;
    let params = match &args.fusion_params {
        Some(p) => FusionParams::load(p).map_err(data(p.display()))?,
        None => {
            log::warn!("no --fusion-params given; using an untrained head");
            init_params(cfg.pipeline.fusion_dims, cfg.pipeline.seed)
        }
    };
    let set = providers(args, &cfg)?;
    let engine = Engine::new(cfg.pipeline, set, params).map_err(data("engine"))?;
    Ok((engine, items))
}

fn check_budget(traces: &[PipelineTrace], budget: f64) -> CliResult {
    let failed = harness::provider_failures(traces);
    if failed > 0 && failed as f64 > budget * traces.len() as f64 {
        return Err(Failure::Provider(format!(
            "{failed} of {} samples failed on provider errors (budget {budget})",
            traces.len()
        )));
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    harness::write_json(path, value).map_err(data(path.display()))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    harness::write_text(path, text).map_err(data(path.display()))
}

fn write_reports(out: &Path, traces: &[PipelineTrace], model: CallModel) -> CliResult {
    let cost = harness::cost_account(traces, model).map_err(data("cost"))?;
    write_json(&out.join("cost.json"), &cost)?;
    write_text(&out.join("cost.csv"), &harness::cost_csv(&cost))?;
    println!(
        "cost: {:.3} api calls/sample, skip rate {:.3}",
        cost.avg_api_calls, cost.skip_rate
    );
    if traces.iter().any(|t| t.label.is_some()) {
        let preds = harness::predictions_from_traces(traces).map_err(data("predictions"))?;
        let report = harness::evaluate(&preds).map_err(data("evaluation"))?;
        write_json(&out.join("eval.json"), &report)?;
        write_text(&out.join("eval.csv"), &harness::eval_csv(&report))?;
        println!(
            "eval: n={} accuracy={:.4} f1_fake={:.4} f1_real={:.4} auc={}",
            report.n,
            report.accuracy,
            report.f1_fake,
            report.f1_real,
            report.auc.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> CliResult {
    let model = call_model(&args.calls)?;
    let (engine, items) = build(&args.pipeline)?;
    let traces = harness::run_corpus(&engine, &items, args.pipeline.jobs);
    let dir = args.out.join("traces");
    for t in &traces {
        t.write_to_dir(&dir).map_err(data(dir.display()))?;
    }
    println!("wrote {} traces to {}", traces.len(), dir.display());
    write_reports(&args.out, &traces, model)?;
    check_budget(&traces, args.pipeline.error_budget)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let banks = read_banks(&args.banks).map_err(data(args.banks.display()))?;
    let first = banks
        .first()
        .ok_or_else(|| Failure::Data(format!("{}: no feature banks", args.banks.display())))?;
    let mut dims = match &args.config {
        Some(p) => ConfigFile::load(p).map_err(data(p.display()))?.pipeline.fusion_dims,
        None => PipelineConfig::default().fusion_dims,
    };
    if args.config.is_none() {
        dims.d = first.bank.dim();
    }
    let data_set: Vec<_> = banks.into_iter().map(|b| (b.bank, b.label)).collect();
    let cfg = TrainConfig {
        lr: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        momentum: args.momentum,
        val_fraction: args.val_fraction,
        patience: args.patience,
        parallel: args.jobs > 1,
    };
    let result = fusion::train(&data_set, &init_params(dims, args.seed), &cfg).map_err(data("training"))?;
    result.params.save(&args.out).map_err(data(args.out.display()))?;
    let curve = args.curve.unwrap_or_else(|| {
        let mut s = args.out.clone().into_os_string();
        s.push(".curve.csv");
        PathBuf::from(s)
    });
    write_text(&curve, &result.curve_csv())?;
    if let Some(last) = result.curve.iter().find(|s| s.epoch == result.best_epoch) {
        println!(
            "best epoch {}: val_loss={:.5} val_acc={:.4}",
            last.epoch, last.val_loss, last.val_acc
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn trace_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("traces");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let model = call_model(&args.calls)?;
    let dir = trace_dir(&args.traces);
    let mut traces = PipelineTrace::read_dir(&dir).map_err(data(dir.display()))?;
    if traces.is_empty() {
        return Err(Failure::Data(format!("{}: no traces", dir.display())));
    }
    match &args.labels {
        Some(path) => {
            let items = harness::ingest_corpus(path).map_err(data(path.display()))?.items;
            let n = harness::attach_labels(&mut traces, &items);
            log::info!("attached {n} labels");
        }
        None if traces.iter().all(|t| t.label.is_none()) => {
            return Err(Failure::Data("no labels: pass --labels with a labeled corpus".into()));
        }
        None => {}
    }
    let out = args.out.unwrap_or_else(|| args.traces.clone());
    write_reports(&out, &traces, model)
}

fn cmd_grid(args: GridArgs) -> CliResult {
    let grid = parse_list::<f64>("grid", &args.grid)?;
    let objective: Objective = args.objective.parse().map_err(Failure::Usage)?;
    let (engine, items) = build(&args.pipeline)?;
    let cache = Arc::new(CacheStore::in_memory());
    let result = harness::grid_search_beta(&engine, &items, &grid, objective, &cache, args.pipeline.jobs)
        .map_err(|e| match e {
            harness::HarnessError::BadGrid => Failure::Usage(e.to_string()),
            e => Failure::Data(e.to_string()),
        })?;
    print!("{}", harness::grid_csv(&result));
    println!("best beta: {}", result.best_beta);
    if let Some(out) = &args.out {
        write_json(&out.join("grid.json"), &result)?;
        write_text(&out.join("grid.csv"), &harness::grid_csv(&result))?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    let taus = parse_list::<u32>("values", &args.values)?;
    if taus.is_empty() {
        return Err(Failure::Usage("--values is empty".into()));
    }
    let (engine, items) = build(&args.pipeline)?;
    let cache = Arc::new(CacheStore::in_memory());
    let rows = harness::sweep_tau(&engine, &items, &taus, &cache, args.pipeline.jobs).map_err(data("sweep"))?;
    print!("{}", harness::tau_csv(&rows));
    if let Some(out) = &args.out {
        write_json(&out.join("tau.json"), &rows)?;
        write_text(&out.join("tau.csv"), &harness::tau_csv(&rows))?;
    }
    Ok(())
}

fn describe(t: &PipelineTrace) -> String {
    let mut s = format!("sample {} (seed {})\n", t.item_id, t.seed);
    if let Some(c) = &t.claims {
        s += &format!("claims ({:?}):\n", c.origin);
        for (i, claim) in c.claims.iter().enumerate() {
            s += &format!("  {}. {} [{:?}]\n", i + 1, claim.statement, claim.category);
        }
    }
    s += "stages:\n";
    for d in &t.decisions {
        let scores: Vec<String> = d.scores.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        s += &format!("  {:?} -> {:?} {}\n", d.stage, d.action, scores.join(" "));
    }
    if let Some(ev) = t.evidence.as_ref().filter(|e| !e.items.is_empty()) {
        s += "evidence:\n";
        for item in &ev.items {
            s += &format!("  {}: {}\n", item.tool, item.content.replace('\n', " | "));
        }
        s += &format!("  summary: {}\n", ev.consolidated_summary);
    }
    if let Some(f) = &t.fusion {
        s += &format!("fusion: masks {:?} alpha {:.3?}\n", f.masks, f.alpha);
    }
    if !t.flags.is_empty() {
        s += &format!("flags: {}\n", t.flags.iter().cloned().collect::<Vec<_>>().join(", "));
    }
    s += &format!(
        "calls: {} ({} tokens)\n",
        t.provider_calls.len(),
        t.total_tokens
    );
    match (&t.error, t.prediction, t.verdict) {
        (Some(e), _, _) => s += &format!("error: {e}\n"),
        (None, Some(p), Some(v)) => {
            s += &format!("prediction: {p:.4} -> {}\n", if v == 1 { "fake" } else { "real" })
        }
        _ => {}
    }
    if let Some(l) = t.label {
        s += &format!("label: {}\n", if l == 1 { "fake" } else { "real" });
    }
    s
}

fn cmd_trace(args: TraceArgs) -> CliResult {
    let path = trace_dir(&args.out).join(PipelineTrace::file_name(&args.id));
    let t = PipelineTrace::read(&path).map_err(data(path.display()))?;
    if args.json {
        println!("{}", t.to_json());
    } else {
        print!("{}", describe(&t));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::TrainFusion(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GridSearch(a) => cmd_grid(a),
        Command::SweepTau(a) => cmd_sweep(a),
        Command::Trace(a) => cmd_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            if let Failure::Usage(_) = f {
                eprintln!("usage: veracity <run|train-fusion|eval|grid-search|sweep-tau|trace> [OPTIONS]; see --help");
            }
            ExitCode::from(f.code())
        }
    }
}
