//! Per-process knot identification state machine.
//!
//! Every state, a process sends its whole local observation graph on each of
//! its outgoing links and merges whatever arrives on its incoming links,
//! recording each incoming link itself. After merging it searches its view for
//! knots and outputs the first one it ever sees. It keeps relaying forever.
//!
//! Messages carry the sender's view as of the end of the previous state, so a
//! link present in state `i` never travels along another link of state `i`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{find_knots, Knot, MinKnotSize, ObservationGraph, ProcessId, StateIndex, TemporalEdge};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("process {process} handed in-edge {edge} for round {round}")]
    InEdgeMismatch {
        process: ProcessId,
        edge: TemporalEdge,
        round: StateIndex,
    },
    #[error("process {process} stepped with round {round} after round {last}")]
    RoundRegression {
        process: ProcessId,
        round: StateIndex,
        last: StateIndex,
    },
    #[error("no input for knot member {0}")]
    MissingInput(ProcessId),
}

/// First time a process saw a knot in its view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub knot: Knot,
    pub round: StateIndex,
}

#[derive(Debug, Clone)]
pub struct Message {
    pub sender: ProcessId,
    pub payload: ObservationGraph,
}

#[derive(Debug, Clone)]
pub struct ProcessState {
    id: ProcessId,
    min_knot_size: MinKnotSize,
    lg: ObservationGraph,
    output: Option<Observation>,
    log: Vec<Observation>,
    seen: BTreeSet<Knot>,
    last_round: Option<StateIndex>,
}

impl ProcessState {
    pub fn new(id: ProcessId, min_knot_size: MinKnotSize) -> Self {
        ProcessState {
            id,
            min_knot_size,
            lg: ObservationGraph::with_owner(id),
            output: None,
            log: Vec::new(),
            seen: BTreeSet::new(),
            last_round: None,
        }
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    /// The local observation graph.
    pub fn view(&self) -> &ObservationGraph {
        &self.lg
    }

    pub fn output(&self) -> Option<&Observation> {
        self.output.as_ref()
    }

    /// Every first-time knot observation in order. Knots first seen in the
    /// same round appear in tie-break order.
    pub fn observations(&self) -> &[Observation] {
        &self.log
    }

    /// What this process sends on every outgoing link of the next state.
    /// Call before any `on_state` of that state.
    pub fn make_message(&self) -> Message {
        Message {
            sender: self.id,
            payload: self.lg.clone(),
        }
    }

    /// Applies the messages received in `round`, each paired with the link it
    /// arrived on. Returns the knots newly observed in this round.
    ///
    /// On error the state is left untouched.
    pub fn on_state<I>(&mut self, incoming: I, round: StateIndex) -> Result<Vec<Knot>, ProtocolError>
    where
        I: IntoIterator<Item = (Message, TemporalEdge)>,
    {
        if let Some(last) = self.last_round.filter(|&last| round < last) {
            return Err(ProtocolError::RoundRegression {
                process: self.id,
                round,
                last,
            });
        }
        let incoming: Vec<(Message, TemporalEdge)> = incoming.into_iter().collect();
        for (msg, edge) in &incoming {
            if edge.dst() != self.id || edge.state() != round || edge.src() != msg.sender {
                return Err(ProtocolError::InEdgeMismatch {
                    process: self.id,
                    edge: *edge,
                    round,
                });
            }
        }
        self.last_round = Some(round);

        let mut changed = false;
        for (msg, edge) in &incoming {
            changed |= self.lg.merge_from(&msg.payload);
            changed |= self.lg.insert(*edge);
        }
        // knots depend only on the static projection
        if !changed {
            return Ok(Vec::new());
        }

        let mut fresh: Vec<Knot> = find_knots(&self.lg, self.min_knot_size)
            .into_iter()
            .filter(|k| !self.seen.contains(k))
            .collect();
        fresh.sort_by(Knot::tie_break_cmp);
        for knot in &fresh {
            self.seen.insert(knot.clone());
            self.log.push(Observation {
                knot: knot.clone(),
                round,
            });
        }
        if self.output.is_none() {
            if let Some(knot) = fresh.first() {
                self.output = Some(Observation {
                    knot: knot.clone(),
                    round,
                });
            }
        }
        Ok(fresh)
    }

    pub fn primary_knot(&self) -> Option<&Knot> {
        primary_of(&self.log)
    }
}

/// The knot first observed in `log`; ties within the earliest round go to the
/// smallest knot by size, then members.
pub fn primary_of(log: &[Observation]) -> Option<&Knot> {
    let first_round = log.iter().map(|o| o.round).min()?;
    log.iter()
        .filter(|o| o.round == first_round)
        .map(|o| &o.knot)
        .min_by(|a, b| a.tie_break_cmp(b))
}

/// Consensus value from an agreed knot: the input of its highest member.
pub fn decide_consensus(knot: &Knot, inputs: &BTreeMap<ProcessId, bool>) -> Result<bool, ProtocolError> {
    if let Some(&missing) = knot.members().iter().find(|p| !inputs.contains_key(p)) {
        return Err(ProtocolError::MissingInput(missing));
    }
    Ok(inputs[&knot.max_member()])
}
