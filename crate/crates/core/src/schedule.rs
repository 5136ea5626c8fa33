//! Finite prefixes of computations and their on-disk format.
//!
//! A schedule file is a header line followed by edge lines:
//!
//! ```text
//! n=5 horizon=10 seed=0 params=example
//! 3 2 2
//! 2 1 3
//! ```
//!
//! States without edges are implied by the horizon.

use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::{parse_edge_line, GraphError, ObservationGraph, ProcessId, StateIndex, TemporalEdge};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("edge {edge} sits in state {expected}")]
    StampMismatch { edge: TemporalEdge, expected: StateIndex },
    #[error("edge {edge} names a process outside 0..{n}")]
    UnknownProcess { edge: TemporalEdge, n: usize },
    #[error("state {index} is outside 0..={horizon}")]
    OutOfRange { index: StateIndex, horizon: StateIndex },
    #[error("params must be non-empty and free of whitespace: `{0}`")]
    InvalidParams(String),
    #[error("schedule header: {0}")]
    Header(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// An ordered sequence of state graphs over processes `0..n`.
///
/// State `i` (1-based) holds only edges stamped `i`; each state graph is a set
/// kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    n: usize,
    states: Vec<Vec<TemporalEdge>>,
    params: String,
    seed: u64,
}

impl Schedule {
    pub fn new(
        n: usize,
        states: Vec<Vec<TemporalEdge>>,
        params: impl Into<String>,
        seed: u64,
    ) -> Result<Self, ScheduleError> {
        let params = params.into();
        if params.is_empty() || params.chars().any(char::is_whitespace) {
            return Err(ScheduleError::InvalidParams(params));
        }
        let mut states = states;
        for (i, state) in states.iter_mut().enumerate() {
            let expected = i as StateIndex + 1;
            for &edge in state.iter() {
                if edge.state() != expected {
                    return Err(ScheduleError::StampMismatch { edge, expected });
                }
                if edge.src().index() >= n || edge.dst().index() >= n {
                    return Err(ScheduleError::UnknownProcess { edge, n });
                }
            }
            state.sort_unstable();
            state.dedup();
        }
        Ok(Schedule {
            n,
            states,
            params,
            seed,
        })
    }

    /// Builds a schedule from unstamped links, stamping state `i` with `i`.
    pub fn from_links<I, S>(
        n: usize,
        states: I,
        params: impl Into<String>,
        seed: u64,
    ) -> Result<Self, ScheduleError>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = (u32, u32)>,
    {
        let stamped = states
            .into_iter()
            .enumerate()
            .map(|(i, links)| {
                links
                    .into_iter()
                    .map(|(s, d)| TemporalEdge::new(s, d, i as StateIndex + 1))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Schedule::new(n, stamped, params, seed)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> StateIndex {
        self.states.len() as StateIndex
    }

    pub fn params(&self) -> &str {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> {
        (0..self.n as u32).map(ProcessId)
    }

    /// Edges of state `index` (1-based).
    pub fn state(&self, index: StateIndex) -> Option<&[TemporalEdge]> {
        let i = usize::try_from(index).ok()?.checked_sub(1)?;
        self.states.get(i).map(Vec::as_slice)
    }

    /// `(index, edges)` for every state in order.
    pub fn states(&self) -> impl Iterator<Item = (StateIndex, &[TemporalEdge])> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| (i as StateIndex + 1, s.as_slice()))
    }

    pub fn total_edges(&self) -> usize {
        self.states.iter().map(Vec::len).sum()
    }

    pub(crate) fn into_parts(self) -> (usize, Vec<Vec<TemporalEdge>>, String, u64) {
        (self.n, self.states, self.params, self.seed)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "n={} horizon={} seed={} params={}\n",
            self.n,
            self.horizon(),
            self.seed,
            self.params
        );
        for state in &self.states {
            for e in state {
                let _ = writeln!(out, "{} {} {}", e.src(), e.dst(), e.state());
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ScheduleError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| ScheduleError::Header("empty input".into()))?;
        let (n, horizon, seed, params) = parse_header(header)?;
        let mut states = vec![Vec::new(); horizon];
        for (i, line) in lines {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let edge = parse_edge_line(line, i + 1)?;
            let slot = usize::try_from(edge.state())
                .ok()
                .and_then(|s| s.checked_sub(1))
                .filter(|&s| s < horizon)
                .ok_or(ScheduleError::OutOfRange {
                    index: edge.state(),
                    horizon: horizon as StateIndex,
                })?;
            states[slot].push(edge);
        }
        Schedule::new(n, states, params, seed)
    }
}

fn parse_header(line: &str) -> Result<(usize, usize, u64, String), ScheduleError> {
    let bad = |msg: &str| ScheduleError::Header(format!("{msg} in `{line}`"));
    let rest = line.strip_prefix("n=").ok_or_else(|| bad("missing n="))?;
    let (n, rest) = rest.split_once(" horizon=").ok_or_else(|| bad("missing horizon="))?;
    let (horizon, rest) = rest.split_once(" seed=").ok_or_else(|| bad("missing seed="))?;
    let (seed, params) = rest.split_once(" params=").ok_or_else(|| bad("missing params="))?;
    Ok((
        n.parse().map_err(|_| bad("bad n"))?,
        horizon.parse().map_err(|_| bad("bad horizon"))?,
        seed.parse().map_err(|_| bad("bad seed"))?,
        params.to_string(),
    ))
}

/// Union of states `1..=index` with original stamps, over all processes.
///
/// `index == 0` is the graph before any state: the processes and no edges.
pub fn computation_graph(
    schedule: &Schedule,
    index: StateIndex,
) -> Result<ObservationGraph, ScheduleError> {
    if index > schedule.horizon() {
        return Err(ScheduleError::OutOfRange {
            index,
            horizon: schedule.horizon(),
        });
    }
    let mut g = ObservationGraph::new();
    for p in schedule.processes() {
        g.insert_node(p);
    }
    for (_, edges) in schedule.states().take(index as usize) {
        for &e in edges {
            g.insert(e);
        }
    }
    Ok(g)
}
