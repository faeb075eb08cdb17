//! Experiment configuration: a TOML document mirroring the
//! `ExperimentConfig` field names, plus grid expansion into the cells a
//! run executes.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::AnswerMode;
use crate::gateway::ProviderConfig;
use crate::model::{MemoryKind, ModelError, RetrievalConfig, RetrievalStrategy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Toml {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid config: {0}")]
    Retrieval(#[from] ModelError),
}

/// Hyperparameter lists for K, R, T, N plus the chunk size L. The first
/// value of each list is the base point; remaining values are explored
/// one axis at a time unless `full_grid` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalGrid {
    pub k: Vec<usize>,
    pub r: Vec<usize>,
    pub t: Vec<usize>,
    pub n: Vec<usize>,
    pub l_chunk_tokens: usize,
}

impl Default for RetrievalGrid {
    fn default() -> Self {
        Self {
            k: vec![100],
            r: vec![10],
            t: vec![50],
            n: vec![3],
            l_chunk_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: usize,
    pub r: usize,
    pub t: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_path: PathBuf,
    /// Each entry is a set of kind labels; "mixed" expands to all four.
    pub memory_kind_sets: Vec<Vec<String>>,
    pub strategies: Vec<String>,
    pub retrieval: RetrievalGrid,
    pub answer_mode: AnswerMode,
    /// Distractor document counts; `run` uses the first entry, the noise
    /// sweep iterates all of them.
    pub noise: Vec<usize>,
    pub provider: ProviderConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub instance_limit: Option<usize>,
    pub full_grid: bool,
    /// Zeroes every reported duration so reruns compare byte-for-byte.
    pub deterministic_timing: bool,
    pub workers: usize,
    /// Response cache location; defaults to cache.jsonl inside the run
    /// directory, giving every run its own cold cache.
    pub cache_path: Option<PathBuf>,
    /// Directory of prompt template overrides.
    pub prompt_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_path: PathBuf::new(),
            memory_kind_sets: vec![vec!["chunk".into()]],
            strategies: vec!["single_step".into()],
            retrieval: RetrievalGrid::default(),
            answer_mode: AnswerMode::MemoryOnly,
            noise: vec![0],
            provider: ProviderConfig::default(),
            seed: 42,
            output_dir: PathBuf::from("runs/run"),
            instance_limit: Some(200),
            full_grid: false,
            deterministic_timing: true,
            workers: 1,
            cache_path: None,
            prompt_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|source| ConfigError::Toml {
            path: path.display().to_string(),
            source: Box::new(source),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dataset_path.as_os_str().is_empty() {
            return Err(ConfigError::Invalid("dataset_path is required".into()));
        }
        if self.memory_kind_sets.is_empty() {
            return Err(ConfigError::Invalid("memory_kind_sets is empty".into()));
        }
        for labels in &self.memory_kind_sets {
            parse_kind_set(labels)?;
        }
        if self.strategies.is_empty() {
            return Err(ConfigError::Invalid("strategies is empty".into()));
        }
        for s in &self.strategies {
            parse_strategy(s)?;
        }
        if self.noise.is_empty() {
            return Err(ConfigError::Invalid("noise is empty".into()));
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.instance_limit == Some(0) {
            return Err(ConfigError::Invalid(
                "instance_limit must be positive".into(),
            ));
        }
        let g = &self.retrieval;
        for (name, list) in [("k", &g.k), ("r", &g.r), ("t", &g.t), ("n", &g.n)] {
            if list.is_empty() {
                return Err(ConfigError::Invalid(format!("retrieval.{name} is empty")));
            }
        }
        for (name, list) in [("k", &g.k), ("r", &g.r), ("t", &g.t)] {
            if list.contains(&0) {
                return Err(ConfigError::Invalid(format!(
                    "retrieval.{name} values must be positive"
                )));
            }
        }
        if g.l_chunk_tokens == 0 {
            return Err(ConfigError::Invalid(
                "retrieval.l_chunk_tokens must be positive".into(),
            ));
        }
        if self.provider.input_window_tokens < g.l_chunk_tokens {
            return Err(ConfigError::Invalid(format!(
                "input_window_tokens {} is smaller than l_chunk_tokens {}",
                self.provider.input_window_tokens, g.l_chunk_tokens
            )));
        }
        Ok(())
    }
}

pub fn parse_strategy(label: &str) -> Result<RetrievalStrategy, ConfigError> {
    match label {
        "single_step" => Ok(RetrievalStrategy::SingleStep),
        "rerank" => Ok(RetrievalStrategy::Rerank),
        "iterative" => Ok(RetrievalStrategy::Iterative),
        other => Err(ConfigError::Invalid(format!(
            "unknown strategy {other:?} (expected single_step, rerank, or iterative)"
        ))),
    }
}

fn parse_kind(label: &str) -> Result<Vec<MemoryKind>, ConfigError> {
    if let Some(kind) = MemoryKind::from_label(label) {
        return Ok(vec![kind]);
    }
    match label {
        "chunks" => Ok(vec![MemoryKind::Chunk]),
        "triples" => Ok(vec![MemoryKind::Triple]),
        "atomic_facts" | "facts" => Ok(vec![MemoryKind::AtomicFact]),
        "summaries" => Ok(vec![MemoryKind::Summary]),
        "mixed" | "all" => Ok(MemoryKind::ALL.to_vec()),
        other => Err(ConfigError::Invalid(format!(
            "unknown memory kind {other:?}"
        ))),
    }
}

/// Parses a list of kind labels into a deduplicated set in canonical
/// kind order. Accepts singular and plural labels plus "mixed".
pub fn parse_kind_set(labels: &[String]) -> Result<Vec<MemoryKind>, ConfigError> {
    if labels.is_empty() {
        return Err(ConfigError::Invalid("memory kind set is empty".into()));
    }
    let mut wanted = HashSet::new();
    for label in labels {
        for kind in parse_kind(label)? {
            wanted.insert(kind);
        }
    }
    Ok(MemoryKind::ALL
        .into_iter()
        .filter(|k| wanted.contains(k))
        .collect())
}

/// Display name for a kind set: "mixed" when all four kinds are present,
/// otherwise labels joined with '+'.
pub fn kind_set_label(kinds: &[MemoryKind]) -> String {
    if kinds.len() == MemoryKind::ALL.len() {
        return "mixed".to_string();
    }
    kinds
        .iter()
        .map(|k| k.label())
        .collect::<Vec<_>>()
        .join("+")
}

/// One unit of work: a memory kind set, a strategy, a hyperparameter
/// point, and a noise level, run over every instance of the dataset.
#[derive(Debug, Clone)]
pub struct Cell {
    pub kinds: Vec<MemoryKind>,
    pub kinds_label: String,
    pub strategy: RetrievalStrategy,
    pub point: GridPoint,
    pub noise: usize,
}

impl Cell {
    fn new(
        kinds: Vec<MemoryKind>,
        strategy: RetrievalStrategy,
        point: GridPoint,
        noise: usize,
    ) -> Self {
        Self {
            kinds_label: kind_set_label(&kinds),
            kinds,
            strategy,
            point,
            noise,
        }
    }

    pub fn id(&self) -> String {
        format!(
            "{}|{}|k{}-r{}-t{}-n{}|noise{}",
            self.kinds_label,
            self.strategy.label(),
            self.point.k,
            self.point.r,
            self.point.t,
            self.point.n,
            self.noise
        )
    }

    pub fn retrieval_config(&self, l_chunk_tokens: usize) -> Result<RetrievalConfig, ModelError> {
        RetrievalConfig::new(
            self.strategy,
            self.point.k,
            self.point.r,
            self.point.t,
            self.point.n,
            l_chunk_tokens,
        )
    }
}

/// Expands the grid into points: the full cartesian product under
/// `full_grid`, otherwise the base point plus one-axis-at-a-time
/// variations in k, r, t, n order.
pub fn expand_grid(grid: &RetrievalGrid, full_grid: bool) -> Vec<GridPoint> {
    let base = GridPoint {
        k: grid.k[0],
        r: grid.r[0],
        t: grid.t[0],
        n: grid.n[0],
    };
    let mut points = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |p: GridPoint, out: &mut Vec<GridPoint>| {
        if seen.insert(p) {
            out.push(p);
        }
    };
    if full_grid {
        for &k in &grid.k {
            for &r in &grid.r {
                for &t in &grid.t {
                    for &n in &grid.n {
                        push(GridPoint { k, r, t, n }, &mut points);
                    }
                }
            }
        }
    } else {
        push(base, &mut points);
        for &k in &grid.k[1..] {
            push(GridPoint { k, ..base }, &mut points);
        }
        for &r in &grid.r[1..] {
            push(GridPoint { r, ..base }, &mut points);
        }
        for &t in &grid.t[1..] {
            push(GridPoint { t, ..base }, &mut points);
        }
        for &n in &grid.n[1..] {
            push(GridPoint { n, ..base }, &mut points);
        }
    }
    points
}

/// Pins the axes a strategy never reads back to the base point, so
/// sweeping an irrelevant axis cannot multiply identical cells.
fn canonical_point(strategy: RetrievalStrategy, point: GridPoint, base: GridPoint) -> GridPoint {
    match strategy {
        RetrievalStrategy::SingleStep => GridPoint {
            k: point.k,
            r: base.r,
            t: base.t,
            n: base.n,
        },
        RetrievalStrategy::Rerank => GridPoint {
            k: point.k,
            r: point.r,
            t: base.t,
            n: base.n,
        },
        RetrievalStrategy::Iterative => GridPoint {
            k: point.k,
            r: base.r,
            t: point.t,
            n: point.n,
        },
    }
}

fn dedup_cells(cells: Vec<Cell>) -> Vec<Cell> {
    let mut seen = HashSet::new();
    cells.into_iter().filter(|c| seen.insert(c.id())).collect()
}

fn validate_cells(cfg: &ExperimentConfig, cells: &[Cell]) -> Result<(), ConfigError> {
    for cell in cells {
        cell.retrieval_config(cfg.retrieval.l_chunk_tokens)?;
    }
    Ok(())
}

/// Cells for `run`: kind sets x strategies x grid points at the first
/// configured noise level.
pub fn cells_for_run(cfg: &ExperimentConfig) -> Result<Vec<Cell>, ConfigError> {
    cfg.validate()?;
    let points = expand_grid(&cfg.retrieval, cfg.full_grid);
    let base = points[0];
    let noise = cfg.noise[0];
    let mut cells = Vec::new();
    for labels in &cfg.memory_kind_sets {
        let kinds = parse_kind_set(labels)?;
        for s in &cfg.strategies {
            let strategy = parse_strategy(s)?;
            for &point in &points {
                let point = canonical_point(strategy, point, base);
                cells.push(Cell::new(kinds.clone(), strategy, point, noise));
            }
        }
    }
    let cells = dedup_cells(cells);
    validate_cells(cfg, &cells)?;
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    K,
    R,
    T,
    N,
    Noise,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::R => "r",
            SweepAxis::T => "t",
            SweepAxis::N => "n",
            SweepAxis::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s.to_ascii_lowercase().as_str() {
            "k" => Ok(SweepAxis::K),
            "r" => Ok(SweepAxis::R),
            "t" => Ok(SweepAxis::T),
            "n" => Ok(SweepAxis::N),
            "noise" => Ok(SweepAxis::Noise),
            other => Err(ConfigError::Invalid(format!(
                "unknown sweep axis {other:?} (expected k, r, t, n, or noise)"
            ))),
        }
    }
}

/// Cells for `sweep --axis`: one cell per axis value per kind set, with
/// the off-axis parameters pinned. K sweeps use single-step retrieval;
/// R fixes K=100 with reranking; T and N fix K=100 with iterative
/// retrieval (N sweeps also fix T=50); noise fixes K=100 with
/// single-step. Cells are ordered axis-major so the first axis value's
/// block matches a plain run's cell order.
pub fn cells_for_sweep(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<Cell>, ConfigError> {
    cfg.validate()?;
    let g = &cfg.retrieval;
    let base = GridPoint {
        k: g.k[0],
        r: g.r[0],
        t: g.t[0],
        n: g.n[0],
    };
    let noise = cfg.noise[0];
    let kind_sets: Vec<Vec<MemoryKind>> = cfg
        .memory_kind_sets
        .iter()
        .map(|labels| parse_kind_set(labels))
        .collect::<Result<_, _>>()?;

    let mut cells = Vec::new();
    let extend =
        |strategy: RetrievalStrategy, point: GridPoint, noise: usize, cells: &mut Vec<Cell>| {
            for kinds in &kind_sets {
                cells.push(Cell::new(kinds.clone(), strategy, point, noise));
            }
        };
    match axis {
        SweepAxis::K => {
            for &k in &g.k {
                extend(
                    RetrievalStrategy::SingleStep,
                    GridPoint { k, ..base },
                    noise,
                    &mut cells,
                );
            }
        }
        SweepAxis::R => {
            for &r in &g.r {
                extend(
                    RetrievalStrategy::Rerank,
                    GridPoint { k: 100, r, ..base },
                    noise,
                    &mut cells,
                );
            }
        }
        SweepAxis::T => {
            for &t in &g.t {
                extend(
                    RetrievalStrategy::Iterative,
                    GridPoint { k: 100, t, ..base },
                    noise,
                    &mut cells,
                );
            }
        }
        SweepAxis::N => {
            for &n in &g.n {
                extend(
                    RetrievalStrategy::Iterative,
                    GridPoint {
                        k: 100,
                        t: 50,
                        n,
                        ..base
                    },
                    noise,
                    &mut cells,
                );
            }
        }
        SweepAxis::Noise => {
            let point = GridPoint { k: 100, ..base };
            for &n_noise in &cfg.noise {
                extend(RetrievalStrategy::SingleStep, point, n_noise, &mut cells);
            }
        }
    }
    let cells = dedup_cells(cells);
    validate_cells(cfg, &cells)?;
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig {
            dataset_path: PathBuf::from("data/x.jsonl"),
            ..ExperimentConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.retrieval.k, cfg.retrieval.k);
        assert_eq!(back.memory_kind_sets, cfg.memory_kind_sets);
    }

    #[test]
    fn load_rejects_unknown_keys_and_bad_values() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "dataset_path = \"x.jsonl\"\nbogus_key = 1").unwrap();
        assert!(matches!(
            ExperimentConfig::load(f.path()),
            Err(ConfigError::Toml { .. })
        ));

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "dataset_path = \"x.jsonl\"\nstrategies = [\"bogus\"]").unwrap();
        assert!(matches!(
            ExperimentConfig::load(f.path()),
            Err(ConfigError::Invalid(_))
        ));

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "strategies = [\"rerank\"]").unwrap();
        let err = ExperimentConfig::load(f.path()).unwrap_err();
        assert!(err.to_string().contains("dataset_path"));
    }

    #[test]
    fn kind_sets_accept_aliases_and_mixed() {
        assert_eq!(
            parse_kind_set(&["chunks".into(), "chunk".into()]).unwrap(),
            vec![MemoryKind::Chunk]
        );
        assert_eq!(
            parse_kind_set(&["mixed".into()]).unwrap(),
            MemoryKind::ALL.to_vec()
        );
        let set = parse_kind_set(&["summary".into(), "triples".into()]).unwrap();
        assert_eq!(set, vec![MemoryKind::Triple, MemoryKind::Summary]);
        assert_eq!(kind_set_label(&set), "triple+summary");
        assert_eq!(kind_set_label(&MemoryKind::ALL), "mixed");
        assert!(parse_kind_set(&["graph".into()]).is_err());
    }

    fn grid(k: &[usize], r: &[usize], t: &[usize], n: &[usize]) -> RetrievalGrid {
        RetrievalGrid {
            k: k.to_vec(),
            r: r.to_vec(),
            t: t.to_vec(),
            n: n.to_vec(),
            l_chunk_tokens: 1024,
        }
    }

    #[test]
    fn oat_expansion_varies_one_axis_at_a_time() {
        let g = grid(&[100, 50], &[10, 5], &[50], &[3, 1]);
        let points = expand_grid(&g, false);
        assert_eq!(
            points,
            vec![
                GridPoint {
                    k: 100,
                    r: 10,
                    t: 50,
                    n: 3
                },
                GridPoint {
                    k: 50,
                    r: 10,
                    t: 50,
                    n: 3
                },
                GridPoint {
                    k: 100,
                    r: 5,
                    t: 50,
                    n: 3
                },
                GridPoint {
                    k: 100,
                    r: 10,
                    t: 50,
                    n: 1
                },
            ]
        );
        let full = expand_grid(&g, true);
        assert_eq!(full.len(), 8, "2 k x 2 r x 1 t x 2 n");
    }

    fn test_cfg() -> ExperimentConfig {
        ExperimentConfig {
            dataset_path: PathBuf::from("data/x.jsonl"),
            memory_kind_sets: vec![vec!["chunk".into()], vec!["triple".into()]],
            strategies: vec!["single_step".into(), "rerank".into()],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn run_cells_canonicalize_irrelevant_axes() {
        let mut cfg = test_cfg();
        cfg.retrieval = grid(&[100], &[10, 5], &[50], &[3]);
        let cells = cells_for_run(&cfg).unwrap();
        let single: Vec<&Cell> = cells
            .iter()
            .filter(|c| c.strategy == RetrievalStrategy::SingleStep)
            .collect();
        let rerank: Vec<&Cell> = cells
            .iter()
            .filter(|c| c.strategy == RetrievalStrategy::Rerank)
            .collect();
        assert_eq!(single.len(), 2, "r variation collapses for single-step");
        assert_eq!(rerank.len(), 4, "r variation kept for rerank");
    }

    #[test]
    fn rerank_keep_larger_than_pool_is_rejected() {
        let mut cfg = test_cfg();
        cfg.retrieval = grid(&[5], &[10], &[50], &[3]);
        assert!(matches!(
            cells_for_run(&cfg),
            Err(ConfigError::Retrieval(_))
        ));
    }

    #[test]
    fn sweep_cells_pin_off_axis_parameters() {
        let mut cfg = test_cfg();
        cfg.retrieval = grid(&[5, 10, 50], &[5, 10], &[5, 75], &[1, 2, 4]);
        cfg.noise = vec![0, 4];

        let k = cells_for_sweep(&cfg, SweepAxis::K).unwrap();
        assert_eq!(k.len(), 3 * 2);
        assert!(k
            .iter()
            .all(|c| c.strategy == RetrievalStrategy::SingleStep));
        assert_eq!(k[0].point.k, 5);
        assert_eq!(k[0].kinds_label, "chunk");
        assert_eq!(k[1].kinds_label, "triple", "axis-major ordering");

        let r = cells_for_sweep(&cfg, SweepAxis::R).unwrap();
        assert!(r
            .iter()
            .all(|c| c.point.k == 100 && c.strategy == RetrievalStrategy::Rerank));

        let n = cells_for_sweep(&cfg, SweepAxis::N).unwrap();
        assert!(n.iter().all(|c| c.point.t == 50
            && c.point.k == 100
            && c.strategy == RetrievalStrategy::Iterative));
        assert_eq!(
            n.iter().map(|c| c.point.n).collect::<Vec<_>>(),
            vec![1, 1, 2, 2, 4, 4]
        );

        let noise = cells_for_sweep(&cfg, SweepAxis::Noise).unwrap();
        assert_eq!(noise.len(), 2 * 2);
        assert_eq!(noise[0].noise, 0);
        assert!(noise
            .iter()
            .all(|c| c.strategy == RetrievalStrategy::SingleStep && c.point.k == 100));
    }

    #[test]
    fn sweep_axis_parses_case_insensitively() {
        assert_eq!(SweepAxis::parse("K").unwrap(), SweepAxis::K);
        assert_eq!(SweepAxis::parse("noise").unwrap(), SweepAxis::Noise);
        assert!(SweepAxis::parse("q").is_err());
    }

    #[test]
    fn cell_ids_are_distinct_and_stable() {
        let cfg = test_cfg();
        let cells = cells_for_run(&cfg).unwrap();
        let ids: HashSet<String> = cells.iter().map(|c| c.id()).collect();
        assert_eq!(ids.len(), cells.len());
        assert_eq!(cells[0].id(), "chunk|single_step|k100-r10-t50-n3|noise0");
    }
}
