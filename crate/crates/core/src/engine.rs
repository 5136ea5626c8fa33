//! Round-by-round execution of a schedule against every process, with trace
//! collection and the agreement/termination check.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{find_knots, Knot, MinKnotSize, ProcessId, StateIndex, TemporalEdge};
use crate::protocol::{Message, Observation, ProcessState, ProtocolError};
use crate::schedule::{computation_graph, Schedule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub min_knot_size: MinKnotSize,
    /// Stop as soon as every process has output. Outputs are write-once, so
    /// the outputs, verdict and longest output time are unaffected; only the
    /// per-round metrics end early.
    pub stop_when_decided: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            min_knot_size: MinKnotSize::DEFAULT,
            stop_when_decided: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RoundMetrics {
    pub round: StateIndex,
    /// Links present in the state, one message each.
    pub messages: usize,
    /// Temporal edges carried in all payloads of the state.
    pub payload_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessTrace {
    pub id: ProcessId,
    pub output: Option<Observation>,
    pub observations: Vec<Observation>,
    /// Cumulative payload edges this process has sent.
    pub payload_edges_sent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub n: usize,
    pub horizon: StateIndex,
    pub rounds_executed: StateIndex,
    pub seed: u64,
    pub params: String,
    pub min_knot_size: MinKnotSize,
    pub processes: Vec<ProcessTrace>,
    pub rounds: Vec<RoundMetrics>,
    /// Knots of the computation graph over the whole schedule.
    pub final_knots: Vec<Knot>,
}

/// A schedule being executed one state at a time.
pub struct Simulation<'a> {
    schedule: &'a Schedule,
    config: RunConfig,
    processes: Vec<ProcessState>,
    next: StateIndex,
    rounds: Vec<RoundMetrics>,
    sent: Vec<u64>,
}

impl<'a> Simulation<'a> {
    pub fn new(schedule: &'a Schedule, config: RunConfig) -> Self {
        Simulation {
            schedule,
            config,
            processes: schedule
                .processes()
                .map(|p| ProcessState::new(p, config.min_knot_size))
                .collect(),
            next: 1,
            rounds: Vec::new(),
            sent: vec![0; schedule.n()],
        }
    }

    pub fn processes(&self) -> &[ProcessState] {
        &self.processes
    }

    /// Index of the last executed state, 0 before the first.
    pub fn round(&self) -> StateIndex {
        self.next - 1
    }

    pub fn all_decided(&self) -> bool {
        self.processes.iter().all(|p| p.output().is_some())
    }

    pub fn is_finished(&self) -> bool {
        self.next > self.schedule.horizon()
            || (self.config.stop_when_decided && self.all_decided())
    }

    /// Executes the next state. Returns its index, or `None` when finished.
    pub fn step(&mut self) -> Result<Option<StateIndex>, EngineError> {
        if self.is_finished() {
            return Ok(None);
        }
        let round = self.next;
        let edges = self.schedule.state(round).unwrap_or_default();

        // all sends are snapshots taken before any receive of this round
        let mut inbox: BTreeMap<ProcessId, Vec<(Message, TemporalEdge)>> = BTreeMap::new();
        let mut payload_edges = 0;
        for &edge in edges {
            let msg = self.processes[edge.src().index()].make_message();
            let size = msg.payload.edge_count();
            payload_edges += size;
            self.sent[edge.src().index()] += size as u64;
            inbox.entry(edge.dst()).or_default().push((msg, edge));
        }
        for (dst, incoming) in inbox {
            self.processes[dst.index()].on_state(incoming, round)?;
        }

        self.rounds.push(RoundMetrics {
            round,
            messages: edges.len(),
            payload_edges,
        });
        self.next += 1;
        Ok(Some(round))
    }

    pub fn run_to_end(&mut self) -> Result<(), EngineError> {
        while self.step()?.is_some() {}
        Ok(())
    }

    pub fn into_trace(self) -> Trace {
        let full = computation_graph(self.schedule, self.schedule.horizon())
            .expect("horizon is in range");
        let final_knots = find_knots(&full, self.config.min_knot_size);
        let processes = self
            .processes
            .into_iter()
            .zip(self.sent)
            .map(|(p, sent)| ProcessTrace {
                id: p.id(),
                output: p.output().cloned(),
                observations: p.observations().to_vec(),
                payload_edges_sent: sent,
            })
            .collect();
        Trace {
            n: self.schedule.n(),
            horizon: self.schedule.horizon(),
            rounds_executed: self.next - 1,
            seed: self.schedule.seed(),
            params: self.schedule.params().to_string(),
            min_knot_size: self.config.min_knot_size,
            processes,
            rounds: self.rounds,
            final_knots,
        }
    }
}

pub fn run(schedule: &Schedule, config: RunConfig) -> Result<Trace, EngineError> {
    let mut sim = Simulation::new(schedule, config);
    sim.run_to_end()?;
    Ok(sim.into_trace())
}

/// Latest output round over all processes; `None` if any process never
/// output.
pub fn longest_output_time(trace: &Trace) -> Option<StateIndex> {
    trace
        .processes
        .iter()
        .map(|p| p.output.as_ref().map(|o| o.round))
        .try_fold(0, |acc, r| r.map(|r| acc.max(r)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// Several knots were first observed in the output round.
    PrimaryTie {
        process: ProcessId,
        round: StateIndex,
        candidates: Vec<Knot>,
    },
    NoOutput { process: ProcessId },
    /// The output knot was not observed by every process within the trace.
    NotGloballyObservable {
        process: ProcessId,
        knot: Knot,
        observers: usize,
    },
    /// The output knot is not a knot of the full computation graph.
    NotInFinalGraph { process: ProcessId, knot: Knot },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::PrimaryTie {
                process,
                round,
                candidates,
            } => {
                write!(f, "process {process}: {} knots first seen in round {round}:", candidates.len())?;
                for k in candidates {
                    write!(f, " {k}")?;
                }
                Ok(())
            }
            Diagnostic::NoOutput { process } => write!(f, "process {process}: no output"),
            Diagnostic::NotGloballyObservable {
                process,
                knot,
                observers,
            } => write!(f, "process {process}: output {knot} observed by only {observers} processes"),
            Diagnostic::NotInFinalGraph { process, knot } => {
                write!(f, "process {process}: output {knot} is not a knot of the full computation graph")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub agreement: bool,
    pub termination: bool,
    /// The agreed knot, when at least one process output and all agree.
    pub knot: Option<Knot>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Verdict {
    pub fn holds(&self) -> bool {
        self.agreement && self.termination
    }
}

pub fn verify(trace: &Trace) -> Verdict {
    let outputs: Vec<&Observation> = trace.processes.iter().filter_map(|p| p.output.as_ref()).collect();
    let agreement = outputs.windows(2).all(|w| w[0].knot == w[1].knot);
    let termination = outputs.len() == trace.processes.len();
    let knot = if agreement { outputs.first().map(|o| o.knot.clone()) } else { None };

    let mut observers: BTreeMap<&Knot, usize> = BTreeMap::new();
    for p in &trace.processes {
        for o in &p.observations {
            *observers.entry(&o.knot).or_default() += 1;
        }
    }

    let mut diagnostics = Vec::new();
    for p in &trace.processes {
        let Some(out) = &p.output else {
            diagnostics.push(Diagnostic::NoOutput { process: p.id });
            continue;
        };
        let tied: Vec<Knot> = p
            .observations
            .iter()
            .filter(|o| o.round == out.round)
            .map(|o| o.knot.clone())
            .collect();
        if tied.len() > 1 {
            diagnostics.push(Diagnostic::PrimaryTie {
                process: p.id,
                round: out.round,
                candidates: tied,
            });
        }
        let seen_by = observers.get(&out.knot).copied().unwrap_or(0);
        if seen_by < trace.processes.len() {
            diagnostics.push(Diagnostic::NotGloballyObservable {
                process: p.id,
                knot: out.knot.clone(),
                observers: seen_by,
            });
        }
        if !trace.final_knots.contains(&out.knot) {
            diagnostics.push(Diagnostic::NotInFinalGraph {
                process: p.id,
                knot: out.knot.clone(),
            });
        }
    }

    Verdict {
        agreement,
        termination,
        knot,
        diagnostics,
    }
}

impl Trace {
    /// `process,output_round,knot_members`, one row per process.
    pub fn outputs_csv(&self) -> String {
        let mut out = String::from("process,output_round,knot_members\n");
        for p in &self.processes {
            match &p.output {
                Some(o) => {
                    let _ = writeln!(out, "{},{},{}", p.id, o.round, o.knot.to_pipe_list());
                }
                None => {
                    let _ = writeln!(out, "{},,", p.id);
                }
            }
        }
        out
    }

    /// `round,messages,payload_edges`, one row per executed state.
    pub fn rounds_csv(&self) -> String {
        let mut out = String::from("round,messages,payload_edges\n");
        for r in &self.rounds {
            let _ = writeln!(out, "{},{},{}", r.round, r.messages, r.payload_edges);
        }
        out
    }
}

/// One JSON object per line.
pub fn diagnostics_jsonl(diagnostics: &[Diagnostic]) -> String {
    let mut out = String::new();
    for d in diagnostics {
        out.push_str(&serde_json::to_string(d).expect("diagnostics serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knot(members: &[u32]) -> Knot {
        Knot::new(members.iter().copied()).unwrap()
    }

    fn three_cycle_then_tail() -> Schedule {
        // 0->1->2->0 closes at 0 in state 3, then 0 informs 1 and 1 informs 2
        Schedule::from_links(3, vec![vec![(0, 1)], vec![(1, 2)], vec![(2, 0)], vec![(0, 1)], vec![(1, 2)]], "t", 0)
            .unwrap()
    }

    #[test]
    fn empty_schedule_has_no_outputs() {
        let s = Schedule::from_links(4, vec![Vec::<(u32, u32)>::new(); 5], "empty", 0).unwrap();
        let t = run(&s, RunConfig::default()).unwrap();
        assert!(t.processes.iter().all(|p| p.output.is_none()));
        assert!(t.rounds.iter().all(|r| r.messages == 0 && r.payload_edges == 0));
        assert_eq!(t.rounds_executed, 5);
        assert_eq!(longest_output_time(&t), None);
        let v = verify(&t);
        assert!(v.agreement && !v.termination);
        assert_eq!(v.knot, None);
    }

    #[test]
    fn small_cycle_run() {
        let t = run(&three_cycle_then_tail(), RunConfig::default()).unwrap();
        let rounds: Vec<_> = t.processes.iter().map(|p| p.output.as_ref().unwrap().round).collect();
        assert_eq!(rounds, vec![3, 4, 5]);
        assert_eq!(longest_output_time(&t), Some(5));
        let v = verify(&t);
        assert!(v.holds());
        assert_eq!(v.knot, Some(knot(&[0, 1, 2])));
        assert!(v.diagnostics.is_empty(), "{:?}", v.diagnostics);
        // payloads: 0, 1, 2, 3, 4 edges
        let payloads: Vec<_> = t.rounds.iter().map(|r| r.payload_edges).collect();
        assert_eq!(payloads, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn stop_when_decided_truncates_metrics_only() {
        let mut s_links = vec![vec![(0, 1)], vec![(1, 2)], vec![(2, 0)], vec![(0, 1)], vec![(1, 2)]];
        s_links.extend(std::iter::repeat_n(vec![(2, 0)], 10));
        let s = Schedule::from_links(3, s_links, "t", 0).unwrap();
        let full = run(&s, RunConfig::default()).unwrap();
        let early = run(
            &s,
            RunConfig {
                stop_when_decided: true,
                ..RunConfig::default()
            },
        )
        .unwrap();
        assert_eq!(full.rounds_executed, 15);
        assert_eq!(early.rounds_executed, 5);
        for (a, b) in full.processes.iter().zip(&early.processes) {
            assert_eq!(a.output, b.output);
        }
        assert_eq!(verify(&full), verify(&early));
    }

    #[test]
    fn silent_process_breaks_termination() {
        let s = Schedule::from_links(4, vec![vec![(0, 1)], vec![(1, 2)], vec![(2, 0)], vec![(0, 1)], vec![(1, 2)]], "t", 0)
            .unwrap();
        let v = verify(&run(&s, RunConfig::default()).unwrap());
        assert!(v.agreement);
        assert!(!v.termination);
        assert!(v.diagnostics.contains(&Diagnostic::NoOutput { process: ProcessId(3) }));
    }

    #[test]
    fn longest_output_time_uniform_round() {
        let mut t = run(&three_cycle_then_tail(), RunConfig::default()).unwrap();
        for p in &mut t.processes {
            p.output.as_mut().unwrap().round = 7;
        }
        assert_eq!(longest_output_time(&t), Some(7));
        t.processes[1].output = None;
        assert_eq!(longest_output_time(&t), None);
    }

    #[test]
    fn tie_is_reported() {
        // process 4 learns two disjoint knots in the same round
        let s = Schedule::from_links(
            5,
            vec![vec![(0, 1), (2, 3)], vec![(1, 0), (3, 2)], vec![(0, 4), (2, 4)]],
            "tie",
            0,
        )
        .unwrap();
        let t = run(&s, RunConfig::default()).unwrap();
        let v = verify(&t);
        assert!(v
            .diagnostics
            .iter()
            .any(|d| matches!(d, Diagnostic::PrimaryTie { process: ProcessId(4), .. })));
        assert_eq!(t.processes[4].output.as_ref().unwrap().knot, knot(&[0, 1]));
    }

    #[test]
    fn csv_and_jsonl_formats() {
        let s = Schedule::from_links(4, vec![vec![(0, 1)], vec![(1, 2)], vec![(2, 0)], vec![(0, 1)], vec![(1, 2)]], "t", 0)
            .unwrap();
        let t = run(&s, RunConfig::default()).unwrap();
        assert_eq!(t.outputs_csv(), "process,output_round,knot_members\n0,3,0|1|2\n1,4,0|1|2\n2,5,0|1|2\n3,,\n");
        assert!(t.rounds_csv().starts_with("round,messages,payload_edges\n1,1,0\n2,1,1\n"));
        let v = verify(&t);
        let jsonl = diagnostics_jsonl(&v.diagnostics);
        let values: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(values.len(), v.diagnostics.len());
        let silent = values.iter().find(|v| v["kind"] == "no_output").unwrap();
        assert_eq!(silent["process"], 3);
        let partial = values.iter().find(|v| v["kind"] == "not_globally_observable").unwrap();
        assert_eq!(partial["knot"], serde_json::json!([0, 1, 2]));
    }
}
