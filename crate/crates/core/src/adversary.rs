//! Schedule generators and adversary-level oracles.
//!
//! Randomized generators use ChaCha8 seeded from a 64-bit seed. The backbone
//! and the per-state link sampling draw from separate ChaCha streams, so one
//! seed can drive both without correlating them.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{run, EngineError, RunConfig};
use crate::graph::{find_knots, Knot, MinKnotSize, ObservationGraph, ProcessId, StateIndex, TemporalEdge};
use crate::protocol::{primary_of, Observation};
use crate::schedule::{Schedule, ScheduleError};

const BACKBONE_STREAM: u64 = 0;
const SAMPLING_STREAM: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdversaryError {
    #[error("need at least 2 processes, got {0}")]
    TooFewProcesses(usize),
    #[error("cycle size {cycle} must be in 2..={n}")]
    CycleSize { cycle: usize, n: usize },
    #[error("edges per state {m} must be in 1..={available}")]
    EdgesPerState { m: usize, available: usize },
    #[error("cannot insert after state {position}: schedule has {horizon} states")]
    InsertPosition { position: StateIndex, horizon: StateIndex },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A directed cycle with trees hanging off it, every tree edge pointing away
/// from the cycle. The cycle is the only knot of the static graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backbone {
    n: usize,
    cycle: Vec<ProcessId>,
    tree_edges: Vec<(ProcessId, ProcessId)>,
    seed: u64,
}

impl Backbone {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Cycle members in link order: `cycle[i] -> cycle[i + 1]`, last to first.
    pub fn cycle(&self) -> &[ProcessId] {
        &self.cycle
    }

    pub fn tree_edges(&self) -> &[(ProcessId, ProcessId)] {
        &self.tree_edges
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cycle_knot(&self) -> Knot {
        Knot::new(self.cycle.iter().copied()).expect("cycle has at least two members")
    }

    /// Cycle links in order, then tree links in attachment order.
    pub fn links(&self) -> Vec<(ProcessId, ProcessId)> {
        let k = self.cycle.len();
        (0..k)
            .map(|i| (self.cycle[i], self.cycle[(i + 1) % k]))
            .chain(self.tree_edges.iter().copied())
            .collect()
    }

    /// The backbone as one static graph, every link stamped 0.
    pub fn static_graph(&self) -> ObservationGraph {
        let mut g = ObservationGraph::new();
        for p in 0..self.n as u32 {
            g.insert_node(ProcessId(p));
        }
        for (s, d) in self.links() {
            g.insert(TemporalEdge::new(s, d, 0).expect("backbone has no self-loops"));
        }
        g
    }

    /// Canonical description used in schedule headers.
    pub fn params(&self) -> String {
        format!("backbone;n={};cycle={}", self.n, self.cycle.len())
    }
}

pub fn gen_backbone(n: usize, cycle_size: usize, seed: u64) -> Result<Backbone, AdversaryError> {
    if n < 2 {
        return Err(AdversaryError::TooFewProcesses(n));
    }
    if cycle_size < 2 || cycle_size > n {
        return Err(AdversaryError::CycleSize { cycle: cycle_size, n });
    }
    let mut rng = rng(seed, BACKBONE_STREAM);
    let mut order: Vec<ProcessId> = (0..n as u32).map(ProcessId).collect();
    order.shuffle(&mut rng);
    let (cycle, rest) = order.split_at(cycle_size);

    let mut connected = cycle.to_vec();
    let mut tree_edges = Vec::with_capacity(rest.len());
    for &node in rest {
        let parent = connected[rng.gen_range(0..connected.len())];
        tree_edges.push((parent, node));
        connected.push(node);
    }
    Ok(Backbone {
        n,
        cycle: cycle.to_vec(),
        tree_edges,
        seed,
    })
}

/// Each of `horizon` states holds `edges_per_state` distinct backbone links
/// drawn uniformly without replacement, independently per state.
pub fn gen_computation(
    backbone: &Backbone,
    edges_per_state: usize,
    horizon: usize,
    seed: u64,
) -> Result<Schedule, AdversaryError> {
    let links = backbone.links();
    if edges_per_state == 0 || edges_per_state > links.len() {
        return Err(AdversaryError::EdgesPerState {
            m: edges_per_state,
            available: links.len(),
        });
    }
    let mut rng = rng(seed, SAMPLING_STREAM);
    let states = (1..=horizon as StateIndex)
        .map(|state| {
            index::sample(&mut rng, links.len(), edges_per_state)
                .into_iter()
                .map(|i| {
                    let (s, d) = links[i];
                    TemporalEdge::new(s, d, state).expect("backbone has no self-loops")
                })
                .collect()
        })
        .collect();
    let params = format!("{};m={};backbone_seed={}", backbone.params(), edges_per_state, backbone.seed);
    Ok(Schedule::new(backbone.n, states, params, seed)?)
}

/// A schedule on which the last process outputs in state `2n - 1`.
///
/// States `1..=n` lay the cycle `0 -> 1 -> ... -> n-1 -> 0` one link at a
/// time, so the knot closes at process 0 in state `n` and nowhere else.
/// States `n+1..=2n-1` then carry it from 0 along `0 -> 1 -> ... -> n-1`,
/// informing one new process per state. Every link starts where the
/// previous one ended.
pub fn worst_case_schedule(n: usize) -> Result<Schedule, AdversaryError> {
    if n < 2 {
        return Err(AdversaryError::TooFewProcesses(n));
    }
    let n32 = n as u32;
    let formation = (0..n32).map(|i| (i, (i + 1) % n32));
    let propagation = (0..n32 - 1).map(|i| (i, i + 1));
    let states: Vec<Vec<(u32, u32)>> = formation.chain(propagation).map(|l| vec![l]).collect();
    Ok(Schedule::from_links(n, states, format!("worst_case;n={n}"), 0)?)
}

/// Inserts a non-communicating state after each listed state (0 means before
/// the first). Repeated positions insert several states there. Later edges
/// are restamped by the number of insertions before them.
pub fn insert_noncomm_states(schedule: &Schedule, positions: &[StateIndex]) -> Result<Schedule, AdversaryError> {
    let horizon = schedule.horizon();
    let mut after: BTreeMap<StateIndex, usize> = BTreeMap::new();
    for &position in positions {
        if position > horizon {
            return Err(AdversaryError::InsertPosition { position, horizon });
        }
        *after.entry(position).or_default() += 1;
    }

    let (n, states, params, seed) = schedule.clone().into_parts();
    let mut out: Vec<Vec<TemporalEdge>> = Vec::with_capacity(states.len() + positions.len());
    let pad = |out: &mut Vec<Vec<TemporalEdge>>, at: StateIndex| {
        for _ in 0..after.get(&at).copied().unwrap_or(0) {
            out.push(Vec::new());
        }
    };
    pad(&mut out, 0);
    for (i, state) in states.into_iter().enumerate() {
        let index = out.len() as StateIndex + 1;
        out.push(state.into_iter().map(|e| e.restamped(index)).collect());
        pad(&mut out, i as StateIndex + 1);
    }
    Ok(Schedule::new(n, out, params, seed)?)
}

/// How many processes observed a knot over the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KnotObservability {
    pub knot: Knot,
    pub observers: usize,
    pub globally_observable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UniformityReport {
    /// Every process has a primary knot within the horizon and all coincide.
    pub uniform: bool,
    pub per_process: BTreeMap<ProcessId, Option<Observation>>,
    /// Every knot observed by any process, sorted by knot.
    pub knots: Vec<KnotObservability>,
}

/// Runs the protocol over the whole schedule and checks whether all
/// processes share the same primary knot.
pub fn check_primary_uniform(schedule: &Schedule, min_knot_size: MinKnotSize) -> Result<UniformityReport, EngineError> {
    let trace = run(
        schedule,
        RunConfig {
            min_knot_size,
            stop_when_decided: false,
        },
    )?;

    let mut per_process = BTreeMap::new();
    let mut observers: BTreeMap<Knot, usize> = BTreeMap::new();
    for p in &trace.processes {
        let primary = primary_of(&p.observations).map(|knot| {
            p.observations
                .iter()
                .find(|o| &o.knot == knot)
                .cloned()
                .expect("primary comes from the log")
        });
        per_process.insert(p.id, primary);
        for o in &p.observations {
            *observers.entry(o.knot.clone()).or_default() += 1;
        }
    }

    let mut primaries = per_process.values();
    let uniform = match primaries.next() {
        Some(Some(first)) => primaries.all(|p| p.as_ref().is_some_and(|p| p.knot == first.knot)),
        _ => false,
    };
    let knots = observers
        .into_iter()
        .map(|(knot, observers)| KnotObservability {
            knot,
            observers,
            globally_observable: observers == schedule.n(),
        })
        .collect();
    Ok(UniformityReport {
        uniform,
        per_process,
        knots,
    })
}

/// Checks that the backbone's static graph has exactly the cycle as its knot.
pub fn backbone_has_unique_knot(backbone: &Backbone) -> bool {
    find_knots(&backbone.static_graph(), MinKnotSize::DEFAULT) == vec![backbone.cycle_knot()]
}

/// Small hand-built schedules.
pub mod scenarios {
    use super::*;

    pub const A: u32 = 0;
    pub const B: u32 = 1;
    pub const C: u32 = 2;
    pub const D: u32 = 3;
    pub const E: u32 = 4;

    /// Five processes `a..e` (ids 0..4). The knot `{b,c,d}` forms in state 4
    /// and reaches `e` over `d -> e` in state 5. `a -> b` in state 6 destroys
    /// it; `c -> a` in state 7 forms `{a,b,c,d}`, which `d` observes first,
    /// in state 8 over `a -> d`. States 9 and 10 spread it to everyone.
    pub fn knot_formation() -> Schedule {
        let states: Vec<Vec<(u32, u32)>> = vec![
            vec![],
            vec![(D, C)],
            vec![(C, B)],
            vec![(B, D)],
            vec![(D, E)],
            vec![(A, B)],
            vec![(C, A)],
            vec![(A, D)],
            vec![(D, E), (D, C)],
            vec![(C, B), (C, A)],
        ];
        Schedule::from_links(5, states, "knot_formation", 0).expect("valid scenario")
    }

    /// Two 2-cycles `{0,1}` and `{2,3}` that never touch. Every process
    /// outputs, but the two halves disagree.
    pub fn disjoint_two_cycles() -> Schedule {
        let states = vec![vec![(0, 1), (2, 3)], vec![(1, 0), (3, 2)], vec![(0, 1), (2, 3)]];
        Schedule::from_links(4, states, "disjoint_two_cycles", 0).expect("valid scenario")
    }
}
