//! Knot identification in asynchronous dynamic networks.
//!
//! Processes flood their local observation graphs over whatever links the
//! network offers in each state and output the first knot (a strongly
//! connected set of processes with no incoming links) they can see. This
//! crate provides:
//!
//! - [`graph`]: temporal observation graphs, SCC condensation and knot search.
//! - [`protocol`]: the per-process state machine and the consensus reduction.
//! - [`schedule`]: finite computations and their text format.
//! - [`adversary`]: backbone, worst-case and padded schedule generators, and
//!   the primary-uniformity oracle.
//! - [`engine`]: the round simulator, traces and the agreement/termination
//!   verifier.
//! - [`experiment`] and [`cli`]: seeded sweeps and the `kia` command line.

pub mod adversary;
pub mod cli;
pub mod engine;
pub mod experiment;
pub mod graph;
pub mod protocol;
pub mod schedule;

pub use adversary::{
    check_primary_uniform, gen_backbone, gen_computation, insert_noncomm_states, worst_case_schedule, Backbone,
    UniformityReport,
};
pub use engine::{longest_output_time, run, verify, RunConfig, Simulation, Trace, Verdict};
pub use graph::{
    condense, find_knots, merge, reachability_knots, Knot, MinKnotSize, ObservationGraph, ProcessId, StateIndex,
    TemporalEdge,
};
pub use protocol::{decide_consensus, Message, Observation, ProcessState};
pub use schedule::{computation_graph, Schedule};
