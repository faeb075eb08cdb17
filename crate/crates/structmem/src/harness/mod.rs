//! Experiment orchestration: runs every (question x memory kinds x
//! strategy x hyperparameter) cell of a configured experiment, scores
//! the answers, and writes the run artifacts (manifest.json,
//! records.jsonl, traces.jsonl, failures.jsonl, summary.csv).

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::answer::{AnswerError, Answerer};
use crate::builder::{BuildError, MemoryBuilder};
use crate::dataset::{self, Dataset, DatasetError, QaInstance, TaskKind};
use crate::eval::{self, EvalError, EvalRecord, HyperPoint, RunSummary, StageTimings, TokenUsage};
use crate::gateway::{
    CacheOnlyProvider, CacheStats, DemoProvider, Gateway, GatewayError, HttpProvider,
    ResponseCache, StatsSnapshot,
};
use crate::model::RetrievalConfig;
use crate::prompts::{PromptError, PromptSet};
use crate::retrieval::{RetrievalTrace, RetrieveError, Retriever};
use crate::store::{MemoryIndex, StoreError};
use crate::token::WordPunctCounter;

pub use config::{
    cells_for_run, cells_for_sweep, Cell, ConfigError, ExperimentConfig, GridPoint, RetrievalGrid,
    SweepAxis,
};

pub const SUMMARY_COLUMNS: [&str; 14] = [
    "dataset",
    "memory",
    "strategy",
    "K",
    "R",
    "T",
    "N",
    "EM",
    "F1",
    "ACC",
    "n",
    "wall_time_s",
    "llm_calls",
    "cache_hits",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("gateway setup: {0}")]
    Gateway(#[from] GatewayError),
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("no readable summary.csv: {0}")]
    MissingSummary(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 3 when the
    /// provider cannot be reached (exit 2, partial failure, is decided
    /// from RunOutcome, not from an error).
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::ProviderUnreachable(_) => 3,
            _ => 1,
        }
    }
}

/// Which backend serves LLM traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayMode {
    /// HTTP provider from the config's provider section.
    Live,
    /// Deterministic built-in provider; no network, no API key.
    Mock,
    /// Replay from the response cache only; any miss aborts.
    Offline,
}

fn resolve_cache_path(cfg: &ExperimentConfig, run_dir: &Path) -> PathBuf {
    cfg.cache_path
        .clone()
        .unwrap_or_else(|| run_dir.join("cache.jsonl"))
}

/// Builds the gateway for a run. The cache file is persistent in every
/// mode, so a rerun pointed at the same cache path replays responses.
pub fn build_gateway(
    cfg: &ExperimentConfig,
    mode: GatewayMode,
    cache_path: &Path,
) -> Result<Gateway, HarnessError> {
    let p = &cfg.provider;
    let cache = ResponseCache::open(cache_path)?;
    let provider: Arc<dyn crate::gateway::Provider> = match mode {
        GatewayMode::Live => Arc::new(HttpProvider::from_config(p)?),
        GatewayMode::Mock => Arc::new(DemoProvider::new(p.embed_dim)),
        GatewayMode::Offline => Arc::new(CacheOnlyProvider::new(
            p.model_name.clone(),
            p.embed_model_name.clone(),
        )),
    };
    Ok(Gateway::new(
        provider,
        cache,
        WordPunctCounter::shared(),
        p.input_window_tokens,
        p.embed_dim,
        p.max_in_flight,
    ))
}

pub fn load_prompts(cfg: &ExperimentConfig) -> Result<PromptSet, HarnessError> {
    Ok(match &cfg.prompt_dir {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::builtin(),
    })
}

#[derive(Debug, Serialize)]
struct RunManifest {
    code_version: String,
    created_unix: u64,
    dataset: String,
    n_instances: usize,
    task: TaskKind,
    cells: Vec<String>,
    prompt_hashes: BTreeMap<String, String>,
    config: ExperimentConfig,
    question_status: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cache: Option<CacheStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    run_totals: Option<StatsSnapshot>,
}

impl RunManifest {
    fn pending(
        cfg: &ExperimentConfig,
        prompts: &PromptSet,
        cells: &[Cell],
        data: &Dataset,
    ) -> Self {
        let mut question_status = BTreeMap::new();
        for cell in cells {
            for instance in data.instances() {
                question_status.insert(
                    format!("{}/{}", cell.id(), instance.question_id),
                    "pending".to_string(),
                );
            }
        }
        let created_unix = if cfg.deterministic_timing {
            0
        } else {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        };
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix,
            dataset: data.name.clone(),
            n_instances: data.len(),
            task: data.task(),
            cells: cells.iter().map(Cell::id).collect(),
            prompt_hashes: prompts
                .content_hashes()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            config: cfg.clone(),
            question_status,
            cache: None,
            run_totals: None,
        }
    }

    fn write(&self, run_dir: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(run_dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Error)]
enum StageError {
    #[error("build: {0}")]
    Build(#[from] BuildError),
    #[error("index: {0}")]
    Index(#[from] StoreError),
    #[error("retrieve: {0}")]
    Retrieve(#[from] RetrieveError),
    #[error("answer: {0}")]
    Answer(#[from] AnswerError),
}

impl StageError {
    fn stage(&self) -> &'static str {
        match self {
            StageError::Build(_) => "build",
            StageError::Index(_) => "index",
            StageError::Retrieve(_) => "retrieve",
            StageError::Answer(_) => "answer",
        }
    }

    /// True when the underlying cause means no provider is available
    /// (network transport failure, or a cache miss in offline mode), so
    /// every remaining question would fail the same way.
    fn is_unreachable(&self) -> bool {
        fn from_store(e: &StoreError) -> Option<&GatewayError> {
            match e {
                StoreError::Gateway(g) => Some(g),
                _ => None,
            }
        }
        fn from_build(e: &BuildError) -> Option<&GatewayError> {
            match e {
                BuildError::Doc { source, .. } => from_build(source),
                BuildError::Gateway(g) => Some(g),
                _ => None,
            }
        }
        let cause = match self {
            StageError::Build(e) => from_build(e),
            StageError::Index(e) => from_store(e),
            StageError::Retrieve(RetrieveError::Gateway(g)) => Some(g),
            StageError::Retrieve(RetrieveError::Store(e)) => from_store(e),
            StageError::Answer(AnswerError::Gateway(g)) => Some(g),
            StageError::Answer(AnswerError::Store(e)) => from_store(e),
            StageError::Answer(_) => None,
        };
        matches!(
            cause,
            Some(GatewayError::Transport(_) | GatewayError::OfflineMiss)
        )
    }
}

struct QuestionResult {
    question_id: String,
    outcome: Result<(EvalRecord, RetrievalTrace), StageError>,
}

struct StageClock {
    deterministic: bool,
    timings: StageTimings,
}

impl StageClock {
    fn new(deterministic: bool) -> Self {
        Self {
            deterministic,
            timings: StageTimings::default(),
        }
    }

    fn measure<T>(&mut self, slot: fn(&mut StageTimings) -> &mut f64, f: impl FnOnce() -> T) -> T {
        if self.deterministic {
            return f();
        }
        let start = Instant::now();
        let out = f();
        *slot(&mut self.timings) += start.elapsed().as_secs_f64();
        out
    }
}

fn process_question(
    cfg: &ExperimentConfig,
    gateway: &Gateway,
    prompts: &PromptSet,
    cell: &Cell,
    rc: RetrievalConfig,
    instance: &QaInstance,
) -> Result<(EvalRecord, RetrievalTrace), StageError> {
    let q_gateway = gateway.for_question();
    let mut clock = StageClock::new(cfg.deterministic_timing);
    let temperature = cfg.provider.temperature;

    let index = clock.measure(
        |t| &mut t.build_s,
        || -> Result<MemoryIndex, StageError> {
            let builder = MemoryBuilder::new(&q_gateway, prompts, rc.l_chunk_tokens)
                .with_max_tokens(cfg.provider.max_tokens_memory)
                .with_temperature(temperature);
            let report = builder.build(&instance.corpus, &cell.kinds)?;
            Ok(MemoryIndex::build(
                report.units,
                &q_gateway,
                &instance.question_id,
            )?)
        },
    )?;

    let retrieval = clock.measure(
        |t| &mut t.retrieve_s,
        || {
            Retriever::new(&index, &q_gateway, prompts, rc)
                .with_temperature(temperature)
                .retrieve(&instance.question)
        },
    )?;

    let answerer = Answerer::new(&q_gateway, prompts)
        .with_max_tokens(cfg.provider.max_tokens_answer)
        .with_temperature(temperature);
    let trace_ref = format!("{}/{}", cell.id(), instance.question_id);

    let record = match instance.task {
        TaskKind::Qa => {
            let outcome = clock.measure(
                |t| &mut t.answer_s,
                || {
                    answerer.answer_qa(
                        &instance.question,
                        &retrieval.hits,
                        cfg.answer_mode,
                        &instance.corpus,
                    )
                },
            )?;
            EvalRecord::qa(
                &instance.question_id,
                outcome.answer_text,
                &instance.gold_answers,
                &trace_ref,
                clock.timings.clone(),
                usage(&q_gateway),
            )
        }
        TaskKind::MultipleChoice => {
            let outcome = clock.measure(
                |t| &mut t.answer_s,
                || {
                    answerer.answer_mc(
                        &instance.question,
                        &instance.choices,
                        &retrieval.hits,
                        cfg.answer_mode,
                        &instance.corpus,
                    )
                },
            )?;
            let letter = outcome.chosen_letter.expect("answer_mc returns a letter");
            let chosen = (letter as u8 - b'A') as usize;
            let gold = instance.gold_choice.expect("validated at load");
            EvalRecord::multiple_choice(
                &instance.question_id,
                letter.to_string(),
                chosen,
                gold,
                &trace_ref,
                clock.timings.clone(),
                usage(&q_gateway),
            )
        }
    };
    Ok((record, retrieval.trace))
}

fn usage(q_gateway: &Gateway) -> TokenUsage {
    let s = q_gateway.local_stats();
    TokenUsage {
        prompt_tokens: s.prompt_tokens,
        completion_tokens: s.completion_tokens,
        embedded_texts: s.embedded_texts,
    }
}

/// Runs every instance of one cell, in dataset order, with up to
/// `cfg.workers` threads. Results come back in dataset order.
fn process_cell(
    cfg: &ExperimentConfig,
    gateway: &Gateway,
    prompts: &PromptSet,
    cell: &Cell,
    data: &Dataset,
) -> Result<Vec<QuestionResult>, HarnessError> {
    let rc = cell
        .retrieval_config(cfg.retrieval.l_chunk_tokens)
        .map_err(ConfigError::Retrieval)?;
    let instances = data.instances();

    if cfg.workers <= 1 {
        let mut results = Vec::with_capacity(instances.len());
        for instance in instances {
            let outcome = process_question(cfg, gateway, prompts, cell, rc, instance);
            if let Err(e) = &outcome {
                if e.is_unreachable() {
                    return Err(HarnessError::ProviderUnreachable(e.to_string()));
                }
            }
            results.push(QuestionResult {
                question_id: instance.question_id.clone(),
                outcome,
            });
        }
        return Ok(results);
    }

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<QuestionResult>>> =
        Mutex::new((0..instances.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(instances.len()) {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= instances.len() {
                    return;
                }
                let instance = &instances[i];
                let outcome = process_question(cfg, gateway, prompts, cell, rc, instance);
                if matches!(&outcome, Err(e) if e.is_unreachable()) {
                    abort.store(true, Ordering::Relaxed);
                }
                slots.lock().unwrap()[i] = Some(QuestionResult {
                    question_id: instance.question_id.clone(),
                    outcome,
                });
            });
        }
    });

    let results: Vec<QuestionResult> = slots.into_inner().unwrap().into_iter().flatten().collect();
    if let Some(err) = results
        .iter()
        .find_map(|r| r.outcome.as_ref().err().filter(|e| e.is_unreachable()))
    {
        return Err(HarnessError::ProviderUnreachable(err.to_string()));
    }
    Ok(results)
}

/// Everything a finished run hands back to the caller.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub summaries: Vec<RunSummary>,
    /// Questions quarantined to failures.jsonl.
    pub quarantined: usize,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    trace_ref: &'a str,
    #[serde(flatten)]
    trace: &'a RetrievalTrace,
}

#[derive(Serialize)]
struct FailureLine<'a> {
    cell: &'a str,
    question_id: &'a str,
    stage: &'a str,
    error: String,
}

struct CsvRow {
    summary: RunSummary,
    wall_time_s: f64,
    llm_calls: u64,
    cache_hits: u64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

fn write_summary_csv(path: &Path, rows: &[CsvRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for row in rows {
        let s = &row.summary;
        let h = &s.hyperparameters;
        w.write_record([
            s.dataset.clone(),
            s.memory_kinds.clone(),
            s.strategy.clone(),
            h.k.to_string(),
            h.r.to_string(),
            h.t.to_string(),
            h.n.to_string(),
            fmt_opt(s.mean_em),
            fmt_opt(s.mean_f1),
            fmt_opt(s.accuracy),
            s.n_instances.to_string(),
            format!("{:.3}", row.wall_time_s),
            row.llm_calls.to_string(),
            row.cache_hits.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Executes `cells` over the configured dataset and writes all run
/// artifacts into `run_dir`. Questions that fail are quarantined to
/// failures.jsonl and never affect other questions' scores; a provider
/// that proves unreachable aborts the run before summary.csv exists.
pub fn execute(
    cfg: &ExperimentConfig,
    cells: &[Cell],
    gateway: &Gateway,
    prompts: &PromptSet,
    run_dir: &Path,
) -> Result<RunOutcome, HarnessError> {
    let baseline = dataset::load_dataset(&cfg.dataset_path, cfg.instance_limit)?;
    std::fs::create_dir_all(run_dir)?;

    let mut manifest = RunManifest::pending(cfg, prompts, cells, &baseline);
    manifest.write(run_dir)?;

    let mut records_out = BufWriter::new(File::create(run_dir.join("records.jsonl"))?);
    let mut traces_out = BufWriter::new(File::create(run_dir.join("traces.jsonl"))?);
    let mut failures_out = BufWriter::new(File::create(run_dir.join("failures.jsonl"))?);

    let mut noisy: BTreeMap<usize, Dataset> = BTreeMap::new();
    let mut rows: Vec<CsvRow> = Vec::new();
    let mut quarantined = 0usize;

    for cell in cells {
        let data = noisy
            .entry(cell.noise)
            .or_insert_with(|| dataset::inject_noise(&baseline, cell.noise, cfg.seed));
        let cell_id = cell.id();
        let stats_before = gateway.run_stats();
        let started = Instant::now();

        let results = process_cell(cfg, gateway, prompts, cell, data)?;

        let mut records = Vec::new();
        let mut fallback_counts: BTreeMap<String, usize> = BTreeMap::new();
        for result in results {
            let key = format!("{}/{}", cell_id, result.question_id);
            match result.outcome {
                Ok((record, trace)) => {
                    for fb in &trace.fallbacks {
                        let label = fb.split('@').next().unwrap_or(fb).to_string();
                        *fallback_counts.entry(label).or_insert(0) += 1;
                    }
                    let line = TraceLine {
                        trace_ref: &record.retrieval_trace_ref,
                        trace: &trace,
                    };
                    writeln!(traces_out, "{}", serde_json::to_string(&line)?)?;
                    writeln!(records_out, "{}", serde_json::to_string(&record)?)?;
                    manifest.question_status.insert(key, "ok".into());
                    records.push(record);
                }
                Err(err) => {
                    let line = FailureLine {
                        cell: &cell_id,
                        question_id: &result.question_id,
                        stage: err.stage(),
                        error: err.to_string(),
                    };
                    writeln!(failures_out, "{}", serde_json::to_string(&line)?)?;
                    manifest.question_status.insert(key, "failed".into());
                    quarantined += 1;
                }
            }
        }

        if !records.is_empty() {
            let point = HyperPoint {
                k: cell.point.k,
                r: cell.point.r,
                t: cell.point.t,
                n: cell.point.n,
                noise: cell.noise,
            };
            let mut summary = eval::aggregate(
                baseline.name.clone(),
                cell.kinds_label.clone(),
                cell.strategy.label(),
                point,
                &records,
            )?;
            summary.fallback_counts = fallback_counts;
            let delta = gateway.run_stats().minus(&stats_before);
            rows.push(CsvRow {
                summary,
                wall_time_s: if cfg.deterministic_timing {
                    0.0
                } else {
                    started.elapsed().as_secs_f64()
                },
                llm_calls: delta.network_calls(),
                cache_hits: delta.cache_hits,
            });
        }
    }

    records_out.flush()?;
    traces_out.flush()?;
    failures_out.flush()?;
    write_summary_csv(&run_dir.join("summary.csv"), &rows)?;

    manifest.cache = Some(gateway.cache_stats());
    manifest.run_totals = Some(gateway.run_stats());
    manifest.write(run_dir)?;

    Ok(RunOutcome {
        run_dir: run_dir.to_path_buf(),
        summaries: rows.into_iter().map(|r| r.summary).collect(),
        quarantined,
    })
}

/// The `run` command: kind sets x strategies x grid points at the first
/// noise level, into the configured output directory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mode: GatewayMode,
) -> Result<RunOutcome, HarnessError> {
    let cells = cells_for_run(cfg)?;
    let run_dir = cfg.output_dir.clone();
    let gateway = build_gateway(cfg, mode, &resolve_cache_path(cfg, &run_dir))?;
    let prompts = load_prompts(cfg)?;
    execute(cfg, &cells, &gateway, &prompts, &run_dir)
}

/// The `sweep` command: one cell per axis value per kind set, written to
/// a sweep_{axis} directory under the configured output directory.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    mode: GatewayMode,
) -> Result<RunOutcome, HarnessError> {
    let cells = cells_for_sweep(cfg, axis)?;
    let run_dir = cfg.output_dir.join(format!("sweep_{}", axis.label()));
    let gateway = build_gateway(cfg, mode, &resolve_cache_path(cfg, &run_dir))?;
    let prompts = load_prompts(cfg)?;
    execute(cfg, &cells, &gateway, &prompts, &run_dir)
}

/// Builds memory units for every question and writes them as JSONL,
/// one `{question_id, unit}` object per line. Returns per-kind counts.
pub fn build_memory_file(
    cfg: &ExperimentConfig,
    kinds: &[crate::model::MemoryKind],
    mode: GatewayMode,
    out: &Path,
) -> Result<BTreeMap<String, usize>, HarnessError> {
    let data = dataset::load_dataset(&cfg.dataset_path, cfg.instance_limit)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let cache = cfg
        .cache_path
        .clone()
        .unwrap_or_else(|| out.with_extension("cache.jsonl"));
    let gateway = build_gateway(cfg, mode, &cache)?;
    let prompts = load_prompts(cfg)?;
    let builder = MemoryBuilder::new(&gateway, &prompts, cfg.retrieval.l_chunk_tokens)
        .with_max_tokens(cfg.provider.max_tokens_memory)
        .with_temperature(cfg.provider.temperature);

    #[derive(Serialize)]
    struct UnitLine<'a> {
        question_id: &'a str,
        unit: &'a crate::model::MemoryUnit,
    }

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut out_file = BufWriter::new(File::create(out)?);
    for instance in data.instances() {
        let report = builder.build(&instance.corpus, kinds).map_err(|e| {
            let stage = StageError::Build(e);
            if stage.is_unreachable() {
                HarnessError::ProviderUnreachable(stage.to_string())
            } else {
                HarnessError::Config(ConfigError::Invalid(stage.to_string()))
            }
        })?;
        for (kind, count) in &report.kind_counts {
            *counts.entry(kind.label().to_string()).or_insert(0) += count;
        }
        for unit in &report.units {
            let line = UnitLine {
                question_id: &instance.question_id,
                unit,
            };
            writeln!(out_file, "{}", serde_json::to_string(&line)?)?;
        }
    }
    out_file.flush()?;
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted_dataset(dir: &Path, n: usize) -> PathBuf {
        let path = dir.join("planted.jsonl");
        let mut f = File::create(&path).unwrap();
        for i in 0..n {
            let line = serde_json::json!({
                "question_id": format!("q{i}"),
                "task": "qa",
                "question": format!("What is stored in slot {i}?"),
                "documents": [
                    {"doc_id": format!("d{i}"),
                     "text": format!("Slot {i} holds the token zebra{i}. Nothing else matters here.")},
                ],
                "gold_answers": [format!("zebra{i}")],
            });
            writeln!(f, "{line}").unwrap();
        }
        path
    }

    fn mock_cfg(dir: &Path, n: usize) -> ExperimentConfig {
        ExperimentConfig {
            dataset_path: planted_dataset(dir, n),
            output_dir: dir.join("run"),
            provider: crate::gateway::ProviderConfig {
                embed_dim: 24,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn mock_run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mock_cfg(dir.path(), 3);
        let outcome = run_experiment(&cfg, GatewayMode::Mock).unwrap();
        assert_eq!(outcome.quarantined, 0);
        assert_eq!(outcome.summaries.len(), 1);
        let s = &outcome.summaries[0];
        assert_eq!(s.memory_kinds, "chunk");
        assert_eq!(s.strategy, "single_step");
        assert_eq!(s.n_instances, 3);
        for file in [
            "manifest.json",
            "records.jsonl",
            "traces.jsonl",
            "summary.csv",
        ] {
            assert!(outcome.run_dir.join(file).exists(), "{file} missing");
        }
        let csv = std::fs::read_to_string(outcome.run_dir.join("summary.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SUMMARY_COLUMNS.join(","));
        assert_eq!(lines.clone().count(), 1);
        let row = lines.next().unwrap();
        assert!(row.starts_with("planted,chunk,single_step,100,10,50,3,"));
        assert!(row.contains(",0.000,"), "wall time zeroed: {row}");

        let manifest = std::fs::read_to_string(outcome.run_dir.join("manifest.json")).unwrap();
        assert!(manifest.contains("\"ok\""));
        assert!(!manifest.contains("\"pending\""));
        assert!(manifest.contains("prompt_hashes"));
    }

    #[test]
    fn warm_rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mock_cfg(dir.path(), 4);
        cfg.cache_path = Some(dir.path().join("shared_cache.jsonl"));
        cfg.memory_kind_sets = vec![vec!["chunk".into()], vec!["summary".into()]];
        cfg.strategies = vec!["single_step".into(), "iterative".into()];
        cfg.retrieval.n = vec![2];

        cfg.output_dir = dir.path().join("cold");
        run_experiment(&cfg, GatewayMode::Mock).unwrap();
        cfg.output_dir = dir.path().join("warm1");
        run_experiment(&cfg, GatewayMode::Mock).unwrap();
        cfg.output_dir = dir.path().join("warm2");
        run_experiment(&cfg, GatewayMode::Mock).unwrap();

        let read = |run: &str, file: &str| std::fs::read(dir.path().join(run).join(file)).unwrap();
        assert_eq!(
            read("cold", "records.jsonl"),
            read("warm1", "records.jsonl"),
            "cold and warm records differ"
        );
        assert_eq!(
            read("warm1", "records.jsonl"),
            read("warm2", "records.jsonl")
        );
        assert_eq!(read("warm1", "summary.csv"), read("warm2", "summary.csv"));
        assert_eq!(read("warm1", "traces.jsonl"), read("warm2", "traces.jsonl"));

        let warm_csv = String::from_utf8(read("warm2", "summary.csv")).unwrap();
        for row in warm_csv.lines().skip(1) {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols[12], "0", "warm run made a network call: {row}");
        }
    }

    #[test]
    fn failures_are_quarantined_without_stopping_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mock_cfg(dir.path(), 3);
        // The answer prompt is scripted but triple extraction is not,
        // so the chunk cell completes while every question of the
        // triple cell fails at build time.
        cfg.memory_kind_sets = vec![vec!["chunk".into()], vec!["triple".into()]];
        let cells = cells_for_run(&cfg).unwrap();
        let gateway = Gateway::scripted(
            vec![(
                crate::gateway::Matcher::Substring("short phrase".into()),
                "zebra".into(),
            )],
            24,
        );
        let prompts = PromptSet::builtin();
        let outcome = execute(&cfg, &cells, &gateway, &prompts, &cfg.output_dir.clone()).unwrap();
        assert_eq!(outcome.quarantined, 3, "triple cell questions quarantined");
        assert_eq!(outcome.summaries.len(), 1, "chunk cell still summarized");
        let failures = std::fs::read_to_string(outcome.run_dir.join("failures.jsonl")).unwrap();
        assert_eq!(failures.lines().count(), 3);
        assert!(failures.contains("\"stage\":\"build\""));
        let manifest = std::fs::read_to_string(outcome.run_dir.join("manifest.json")).unwrap();
        assert!(manifest.contains("\"failed\""));
    }

    #[test]
    fn offline_mode_with_cold_cache_is_unreachable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mock_cfg(dir.path(), 2);
        cfg.memory_kind_sets = vec![vec!["summary".into()]];
        let err = run_experiment(&cfg, GatewayMode::Offline).unwrap_err();
        assert!(matches!(err, HarnessError::ProviderUnreachable(_)));
        assert_eq!(err.exit_code(), 3);
        assert!(
            !cfg.output_dir.join("summary.csv").exists(),
            "aborted run must not write a final summary"
        );
    }

    #[test]
    fn offline_mode_replays_a_mock_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mock_cfg(dir.path(), 2);
        cfg.cache_path = Some(dir.path().join("cache.jsonl"));
        cfg.memory_kind_sets = vec![vec!["summary".into()]];
        cfg.provider.model_name = "demo-chat".into();
        cfg.provider.embed_model_name = "hash-embed".into();

        cfg.output_dir = dir.path().join("mock");
        run_experiment(&cfg, GatewayMode::Mock).unwrap();
        cfg.output_dir = dir.path().join("offline");
        let outcome = run_experiment(&cfg, GatewayMode::Offline).unwrap();
        assert_eq!(outcome.quarantined, 0);
        assert_eq!(
            std::fs::read(dir.path().join("mock/records.jsonl")).unwrap(),
            std::fs::read(dir.path().join("offline/records.jsonl")).unwrap()
        );
    }

    #[test]
    fn parallel_workers_match_single_worker_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mock_cfg(dir.path(), 6);
        cfg.memory_kind_sets = vec![vec!["mixed".into()]];
        cfg.strategies = vec!["rerank".into()];
        cfg.retrieval.r = vec![3];
        cfg.retrieval.k = vec![8];

        cfg.output_dir = dir.path().join("serial");
        run_experiment(&cfg, GatewayMode::Mock).unwrap();
        cfg.workers = 4;
        cfg.output_dir = dir.path().join("parallel");
        run_experiment(&cfg, GatewayMode::Mock).unwrap();

        assert_eq!(
            std::fs::read(dir.path().join("serial/records.jsonl")).unwrap(),
            std::fs::read(dir.path().join("parallel/records.jsonl")).unwrap()
        );
    }

    #[test]
    fn noise_sweep_first_block_matches_plain_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mock_cfg(dir.path(), 4);
        cfg.noise = vec![0, 2];
        cfg.output_dir = dir.path().join("base");
        let base = run_experiment(&cfg, GatewayMode::Mock).unwrap();

        cfg.output_dir = dir.path().join("sw");
        let swept = sweep(&cfg, SweepAxis::Noise, GatewayMode::Mock).unwrap();
        assert_eq!(swept.run_dir, dir.path().join("sw/sweep_noise"));
        assert_eq!(swept.summaries.len(), 2);

        let base_csv = std::fs::read_to_string(base.run_dir.join("summary.csv")).unwrap();
        let sweep_csv = std::fs::read_to_string(swept.run_dir.join("summary.csv")).unwrap();
        let base_row = base_csv.lines().nth(1).unwrap();
        let sweep_row0 = sweep_csv.lines().nth(1).unwrap();
        assert_eq!(
            base_row, sweep_row0,
            "noise=0 sweep row differs from baseline"
        );

        let noisy_row = sweep_csv.lines().nth(2).unwrap();
        assert_ne!(sweep_row0, noisy_row);
    }

    #[test]
    fn build_memory_file_writes_units_with_question_ids() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mock_cfg(dir.path(), 2);
        let out = dir.path().join("mem/units.jsonl");
        let counts = build_memory_file(
            &cfg,
            &[
                crate::model::MemoryKind::Chunk,
                crate::model::MemoryKind::Summary,
            ],
            GatewayMode::Mock,
            &out,
        )
        .unwrap();
        assert_eq!(counts.get("summary"), Some(&2));
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 4);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("question_id").is_some());
            assert!(v["unit"].get("mem_id").is_some());
        }
    }
}
