//! Parameter sweeps over generated backbone computations.
//!
//! A sweep enumerates cells `(cycle_size, edges_per_round, seed index)` in
//! that nesting order. Cell `c` uses seed `base_seed + c`. Results come back
//! in cell order whatever the worker count.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::adversary::{gen_backbone, gen_computation, AdversaryError};
use crate::engine::{longest_output_time, run, verify, EngineError, RunConfig};
use crate::graph::{MinKnotSize, StateIndex};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("bad value `{value}` for `{key}`: {reason}")]
    Invalid {
        key: &'static str,
        value: String,
        reason: String,
    },
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Cycle sizes to sweep: an explicit list or an inclusive stepped range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CycleSizes {
    List(Vec<usize>),
    Range { start: usize, end: usize, step: usize },
}

impl CycleSizes {
    pub fn values(&self) -> Vec<usize> {
        match self {
            CycleSizes::List(v) => v.clone(),
            CycleSizes::Range { start, end, step } => (*start..=*end).step_by(*step).collect(),
        }
    }

    /// `4,12,24`, `2..100` or `2..100:7`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("`{s}` is not a count"));
        if let Some((start, rest)) = text.split_once("..") {
            let (end, step) = match rest.split_once(':') {
                Some((end, step)) => (num(end)?, num(step)?),
                None => (num(rest)?, 1),
            };
            let start = num(start)?;
            if step == 0 || start > end {
                return Err("range needs start <= end and step >= 1".into());
            }
            return Ok(CycleSizes::Range { start, end, step });
        }
        let list = text.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
        Ok(CycleSizes::List(list))
    }
}

impl fmt::Display for CycleSizes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CycleSizes::List(v) => write!(f, "{}", join(v)),
            CycleSizes::Range { start, end, step: 1 } => write!(f, "{start}..{end}"),
            CycleSizes::Range { start, end, step } => write!(f, "{start}..{end}:{step}"),
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub cycle_sizes: CycleSizes,
    pub edges_per_round: Vec<usize>,
    pub horizon: usize,
    pub num_seeds: usize,
    pub base_seed: u64,
    pub min_knot_size: MinKnotSize,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// The knot-size sweep: 100 processes, cycles of 2 to 100, 1/5/10 links
    /// per state, 6000 states, 10 computations per point.
    fn default() -> Self {
        ExperimentConfig {
            n: 100,
            cycle_sizes: CycleSizes::Range {
                start: 2,
                end: 100,
                step: 1,
            },
            edges_per_round: vec![1, 5, 10],
            horizon: 6000,
            num_seeds: 10,
            base_seed: 0,
            min_knot_size: MinKnotSize::DEFAULT,
            output: None,
        }
    }
}

/// Raw `key=value` settings, later entries overriding earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    /// Parses `key=value` pairs separated by newlines or spaces. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut out = Settings::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            for pair in line.split_whitespace() {
                let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
                    line: i + 1,
                    text: pair.to_string(),
                })?;
                out.set(k, v);
            }
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.trim().to_string(), value.into());
    }

    pub fn overlay(&mut self, other: &Settings) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }
}

const KEYS: &[&str] = &[
    "n",
    "cycle_size",
    "edges_per_round",
    "horizon",
    "num_seeds",
    "base_seed",
    "min_knot_size",
    "output",
];

impl ExperimentConfig {
    /// Applies settings on top of the defaults and validates the result.
    pub fn from_settings(settings: &Settings) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (key, value) in &settings.0 {
            let key: &'static str = KEYS
                .iter()
                .find(|k| **k == key.as_str())
                .ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
            let invalid = |reason: String| ConfigError::Invalid {
                key,
                value: value.clone(),
                reason,
            };
            let count = || value.parse::<usize>().map_err(|e| invalid(e.to_string()));
            match key {
                "n" => cfg.n = count()?,
                "cycle_size" => cfg.cycle_sizes = CycleSizes::parse(value).map_err(invalid)?,
                "edges_per_round" => {
                    cfg.edges_per_round = value
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| invalid(e.to_string()))?
                }
                "horizon" => cfg.horizon = count()?,
                "num_seeds" => cfg.num_seeds = count()?,
                "base_seed" => cfg.base_seed = value.parse().map_err(|e: std::num::ParseIntError| invalid(e.to_string()))?,
                "min_knot_size" => {
                    cfg.min_knot_size = MinKnotSize::new(count()?).map_err(|e| invalid(e.to_string()))?
                }
                "output" => cfg.output = Some(PathBuf::from(value)),
                _ => unreachable!("key list is exhaustive"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &'static str, value: String, reason: &str| {
            Err(ConfigError::Invalid {
                key,
                value,
                reason: reason.to_string(),
            })
        };
        if self.n < 2 {
            return invalid("n", self.n.to_string(), "need at least 2 processes");
        }
        let sizes = self.cycle_sizes.values();
        if sizes.is_empty() || sizes.iter().any(|&k| k < 2 || k > self.n) {
            return invalid("cycle_size", self.cycle_sizes.to_string(), "every cycle size must be in 2..=n");
        }
        // a backbone over n processes has exactly n links
        if self.edges_per_round.is_empty() || self.edges_per_round.iter().any(|&m| m == 0 || m > self.n) {
            return invalid("edges_per_round", join(&self.edges_per_round), "every value must be in 1..=n");
        }
        if self.horizon == 0 {
            return invalid("horizon", "0".into(), "must be positive");
        }
        if self.num_seeds == 0 {
            return invalid("num_seeds", "0".into(), "must be positive");
        }
        Ok(())
    }

    /// Every parameter that affects the data, on one line. Parses back into
    /// the same config through [`Settings::parse`].
    pub fn canonical(&self) -> String {
        format!(
            "n={} cycle_size={} edges_per_round={} horizon={} num_seeds={} base_seed={} min_knot_size={}",
            self.n,
            self.cycle_sizes,
            join(&self.edges_per_round),
            self.horizon,
            self.num_seeds,
            self.base_seed,
            self.min_knot_size.get()
        )
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for k in self.cycle_sizes.values() {
            for &m in &self.edges_per_round {
                for _ in 0..self.num_seeds {
                    let index = cells.len();
                    cells.push(Cell {
                        index,
                        cycle_size: k,
                        edges_per_round: m,
                        seed: self.base_seed.wrapping_add(index as u64),
                    });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub index: usize,
    pub cycle_size: usize,
    pub edges_per_round: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellResult {
    pub cell: Cell,
    pub longest_output_round: Option<StateIndex>,
    pub agreement: bool,
    pub termination: bool,
    pub knot_size: Option<usize>,
    /// Agreed knot equals the backbone cycle.
    pub knot_is_cycle: bool,
}

pub fn run_cell(config: &ExperimentConfig, cell: Cell) -> Result<CellResult, SweepError> {
    let backbone = gen_backbone(config.n, cell.cycle_size, cell.seed)?;
    let schedule = gen_computation(&backbone, cell.edges_per_round, config.horizon, cell.seed)?;
    let trace = run(
        &schedule,
        RunConfig {
            min_knot_size: config.min_knot_size,
            stop_when_decided: true,
        },
    )?;
    let verdict = verify(&trace);
    Ok(CellResult {
        cell,
        longest_output_round: longest_output_time(&trace),
        agreement: verdict.agreement,
        termination: verdict.termination,
        knot_size: verdict.knot.as_ref().map(|k| k.len()),
        knot_is_cycle: verdict.knot == Some(backbone.cycle_knot()),
    })
}

pub fn run_sweep(config: &ExperimentConfig, workers: Option<usize>) -> Result<Vec<CellResult>, SweepError> {
    let cells = config.cells();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| SweepError::Pool(e.to_string()))?;
    pool.install(|| cells.par_iter().map(|&cell| run_cell(config, cell)).collect())
}

/// Aggregate over the seeds of one `(cycle_size, edges_per_round)` point.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub cycle_size: usize,
    pub edges_per_round: usize,
    /// Arithmetic mean of the longest output round over terminated cells.
    pub mean_output_round: Option<f64>,
    /// Cells that did not terminate within the horizon.
    pub excluded: usize,
    pub agreement: bool,
    pub termination: bool,
    pub knot_size: Option<usize>,
}

/// Groups consecutive cells with the same point, in cell order.
pub fn summarize(results: &[CellResult]) -> Vec<GroupSummary> {
    results
        .chunk_by(|a, b| {
            (a.cell.cycle_size, a.cell.edges_per_round) == (b.cell.cycle_size, b.cell.edges_per_round)
        })
        .map(|group| {
            let done: Vec<StateIndex> = group
                .iter()
                .filter(|r| r.termination)
                .filter_map(|r| r.longest_output_round)
                .collect();
            let mean = (!done.is_empty()).then(|| done.iter().map(|&r| r as f64).sum::<f64>() / done.len() as f64);
            let first_size = group[0].knot_size;
            GroupSummary {
                cycle_size: group[0].cell.cycle_size,
                edges_per_round: group[0].cell.edges_per_round,
                mean_output_round: mean,
                excluded: group.len() - done.len(),
                agreement: group.iter().all(|r| r.agreement),
                termination: group.iter().all(|r| r.termination),
                knot_size: group.iter().all(|r| r.knot_size == first_size).then_some(first_size).flatten(),
            }
        })
        .collect()
}

pub const SWEEP_COLUMNS: &str =
    "cycle_size,edges_per_round,seed,longest_output_round,mean_output_round,agreement,termination,knot_size,excluded";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Sweep CSV: a comment header with the canonical config, the column line,
/// then for each point its per-seed rows followed by a `mean` row.
pub fn sweep_csv(config: &ExperimentConfig, results: &[CellResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# kia sweep");
    let _ = writeln!(out, "# config: {}", config.canonical());
    let _ = writeln!(out, "# base_seed: {}", config.base_seed);
    out.push_str(SWEEP_COLUMNS);
    out.push('\n');

    let summaries = summarize(results);
    let mut rest = results;
    for s in &summaries {
        let take = rest
            .iter()
            .take_while(|r| (r.cell.cycle_size, r.cell.edges_per_round) == (s.cycle_size, s.edges_per_round))
            .count();
        let (group, tail) = rest.split_at(take);
        rest = tail;
        for r in group {
            let _ = writeln!(
                out,
                "{},{},{},{},,{},{},{},{}",
                r.cell.cycle_size,
                r.cell.edges_per_round,
                r.cell.seed,
                opt(r.longest_output_round),
                r.agreement,
                r.termination,
                opt(r.knot_size),
                u8::from(!r.termination)
            );
        }
        let _ = writeln!(
            out,
            "{},{},mean,,{},{},{},{},{}",
            s.cycle_size,
            s.edges_per_round,
            opt(s.mean_output_round.map(|m| format!("{m:.3}"))),
            s.agreement,
            s.termination,
            opt(s.knot_size),
            s.excluded
        );
    }
    out
}
