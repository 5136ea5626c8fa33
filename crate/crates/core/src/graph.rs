//! Temporal observation graphs and knot analytics.
//!
//! An [`ObservationGraph`] is a set of [`TemporalEdge`]s (a directed link
//! stamped with the state it appeared in) together with the processes incident
//! to them. The same type holds the global computation graph and each
//! process's local view.
//!
//! Knot analysis ignores stamps: the graph is projected to a static digraph in
//! which parallel temporal edges collapse into one arc. A knot is a strongly
//! connected component of that digraph that has no incoming arc from outside
//! the component and at least [`MinKnotSize`] members.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position of a state in a computation. The first state has index 1.
pub type StateIndex = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop on process {0} is not a link")]
    SelfLoop(ProcessId),
    #[error("knot needs at least two members, got {0}")]
    KnotTooSmall(usize),
    #[error("minimum knot size must be at least 2, got {0}")]
    MinKnotSize(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for ProcessId {
    fn from(id: u32) -> Self {
        ProcessId(id)
    }
}

/// The presence of the link `src -> dst` in state `state`.
///
/// The same link in two different states is two distinct edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TemporalEdge {
    src: ProcessId,
    dst: ProcessId,
    state: StateIndex,
}

impl TemporalEdge {
    pub fn new(
        src: impl Into<ProcessId>,
        dst: impl Into<ProcessId>,
        state: StateIndex,
    ) -> Result<Self, GraphError> {
        let (src, dst) = (src.into(), dst.into());
        if src == dst {
            return Err(GraphError::SelfLoop(src));
        }
        Ok(TemporalEdge { src, dst, state })
    }

    pub fn src(&self) -> ProcessId {
        self.src
    }

    pub fn dst(&self) -> ProcessId {
        self.dst
    }

    pub fn state(&self) -> StateIndex {
        self.state
    }

    /// Same link, different state.
    pub fn restamped(&self, state: StateIndex) -> Self {
        TemporalEdge { state, ..*self }
    }
}

impl fmt::Display for TemporalEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}@{}", self.src, self.dst, self.state)
    }
}

/// Lower bound on the number of members a knot must have to be reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct MinKnotSize(usize);

impl MinKnotSize {
    pub const DEFAULT: MinKnotSize = MinKnotSize(2);

    pub fn new(size: usize) -> Result<Self, GraphError> {
        if size < 2 {
            return Err(GraphError::MinKnotSize(size));
        }
        Ok(MinKnotSize(size))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl Default for MinKnotSize {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<usize> for MinKnotSize {
    type Error = GraphError;

    fn try_from(size: usize) -> Result<Self, Self::Error> {
        MinKnotSize::new(size)
    }
}

impl From<MinKnotSize> for usize {
    fn from(size: MinKnotSize) -> usize {
        size.0
    }
}

/// A knot identified by its member set, stored sorted ascending.
///
/// The derived ordering is lexicographic over the sorted member list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ProcessId>", into = "Vec<ProcessId>")]
pub struct Knot(Vec<ProcessId>);

impl Knot {
    pub fn new<I, P>(members: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = P>,
        P: Into<ProcessId>,
    {
        let set: BTreeSet<ProcessId> = members.into_iter().map(Into::into).collect();
        if set.len() < 2 {
            return Err(GraphError::KnotTooSmall(set.len()));
        }
        Ok(Knot(set.into_iter().collect()))
    }

    pub fn members(&self) -> &[ProcessId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, p: ProcessId) -> bool {
        self.0.binary_search(&p).is_ok()
    }

    /// Highest member identifier.
    pub fn max_member(&self) -> ProcessId {
        *self.0.last().expect("knot has at least two members")
    }

    /// Members joined with `|`, as used in trace files.
    pub fn to_pipe_list(&self) -> String {
        self.0
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Ordering used to pick one knot among several first observed in the
    /// same round: smaller knots first, then lexicographic members.
    pub fn tie_break_cmp(&self, other: &Knot) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl TryFrom<Vec<ProcessId>> for Knot {
    type Error = GraphError;

    fn try_from(members: Vec<ProcessId>) -> Result<Self, Self::Error> {
        Knot::new(members)
    }
}

impl From<Knot> for Vec<ProcessId> {
    fn from(knot: Knot) -> Self {
        knot.0
    }
}

impl fmt::Display for Knot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

/// In-events of one destination as `(state, src)`, sorted and deduplicated.
/// A process appends its own in-links in state order, so the copies of one
/// destination's events held by different views are usually prefixes of each
/// other.
type InEvents = Vec<(StateIndex, ProcessId)>;

fn is_sorted_subset(small: &[(StateIndex, ProcessId)], big: &[(StateIndex, ProcessId)]) -> bool {
    if small.len() > big.len() {
        return false;
    }
    if big.starts_with(small) {
        return true;
    }
    let mut rest = big;
    for x in small {
        match rest.binary_search(x) {
            Ok(i) => rest = &rest[i + 1..],
            Err(_) => return false,
        }
    }
    true
}

fn sorted_union(a: &[(StateIndex, ProcessId)], b: &[(StateIndex, ProcessId)]) -> InEvents {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// A set of temporal edges plus the processes incident to them.
///
/// Edges are grouped by destination and each group is reference counted, so
/// cloning a graph and merging graphs that share history are cheap. Flooding
/// protocols copy whole views around constantly and most groups end up shared.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct ObservationGraph {
    incoming: BTreeMap<ProcessId, Arc<InEvents>>,
    arcs: BTreeSet<(ProcessId, ProcessId)>,
    nodes: BTreeSet<ProcessId>,
    edge_count: usize,
}

impl ObservationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// An empty local view owned by `owner`.
    pub fn with_owner(owner: ProcessId) -> Self {
        let mut g = Self::new();
        g.nodes.insert(owner);
        g
    }

    pub fn from_edges<I: IntoIterator<Item = TemporalEdge>>(edges: I) -> Self {
        let mut g = Self::new();
        for e in edges {
            g.insert(e);
        }
        g
    }

    /// Inserts an edge. Returns true if the static projection changed.
    pub fn insert(&mut self, e: TemporalEdge) -> bool {
        let key = (e.state, e.src);
        let group = self.incoming.entry(e.dst).or_default();
        let fresh = match group.last() {
            Some(last) if *last >= key => group.binary_search(&key).err(),
            _ => Some(group.len()),
        };
        if let Some(at) = fresh {
            Arc::make_mut(group).insert(at, key);
            self.edge_count += 1;
        }
        let mut changed = self.arcs.insert((e.src, e.dst));
        changed |= self.nodes.insert(e.src);
        changed |= self.nodes.insert(e.dst);
        changed
    }

    /// Returns true if the node was not present.
    pub fn insert_node(&mut self, p: ProcessId) -> bool {
        self.nodes.insert(p)
    }

    /// In-place union. Returns true if the static projection (arcs or nodes)
    /// changed, which is the only way the knots of the graph can change.
    pub fn merge_from(&mut self, other: &ObservationGraph) -> bool {
        let mut changed = false;
        for (&dst, theirs) in &other.incoming {
            let added: &[(StateIndex, ProcessId)] = match self.incoming.get_mut(&dst) {
                None => {
                    self.incoming.insert(dst, Arc::clone(theirs));
                    self.edge_count += theirs.len();
                    theirs
                }
                Some(mine) => {
                    if Arc::ptr_eq(mine, theirs) || is_sorted_subset(theirs, mine) {
                        continue;
                    }
                    let before = mine.len();
                    let added = if theirs.starts_with(mine) {
                        *mine = Arc::clone(theirs);
                        &theirs[before..]
                    } else {
                        *mine = Arc::new(sorted_union(mine, theirs));
                        &theirs[..]
                    };
                    self.edge_count += mine.len() - before;
                    added
                }
            };
            for &(_, src) in added {
                changed |= self.arcs.insert((src, dst));
            }
        }
        for &p in &other.nodes {
            changed |= self.nodes.insert(p);
        }
        changed
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_count == 0 && self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn contains_node(&self, p: ProcessId) -> bool {
        self.nodes.contains(&p)
    }

    /// Arcs of the static projection, sorted.
    pub fn arcs(&self) -> impl Iterator<Item = (ProcessId, ProcessId)> + '_ {
        self.arcs.iter().copied()
    }

    pub fn contains(&self, e: &TemporalEdge) -> bool {
        self.incoming
            .get(&e.dst)
            .is_some_and(|g| g.binary_search(&(e.state, e.src)).is_ok())
    }

    /// Edges ordered by destination, then state, then source.
    pub fn edges(&self) -> impl Iterator<Item = TemporalEdge> + '_ {
        self.incoming.iter().flat_map(|(&dst, group)| {
            group
                .iter()
                .map(move |&(state, src)| TemporalEdge { src, dst, state })
        })
    }

    /// True if every edge and node of `self` is in `other`.
    pub fn is_subgraph_of(&self, other: &ObservationGraph) -> bool {
        self.nodes.is_subset(&other.nodes)
            && self.incoming.iter().all(|(dst, mine)| match other.incoming.get(dst) {
                Some(theirs) => Arc::ptr_eq(mine, theirs) || is_sorted_subset(mine, theirs),
                None => false,
            })
    }

    /// Serializes the edges as `src dst state` lines, sorted by state, then
    /// source, then destination.
    pub fn to_edge_list(&self) -> String {
        let mut edges: Vec<TemporalEdge> = self.edges().collect();
        edges.sort_by_key(|e| (e.state, e.src, e.dst));
        let mut out = String::new();
        for e in edges {
            out.push_str(&format!("{} {} {}\n", e.src, e.dst, e.state));
        }
        out
    }

    /// Parses `src dst state` lines. Blank lines and `#` comments are skipped.
    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut g = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            g.insert(parse_edge_line(line, i + 1)?);
        }
        Ok(g)
    }
}

impl fmt::Debug for ObservationGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObservationGraph")
            .field("nodes", &self.nodes)
            .field("edges", &self.edges().map(|e| e.to_string()).collect::<Vec<_>>())
            .finish()
    }
}

pub(crate) fn parse_edge_line(line: &str, line_no: usize) -> Result<TemporalEdge, GraphError> {
    let parse_err = |message: String| GraphError::Parse { line: line_no, message };
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 3 {
        return Err(parse_err(format!(
            "expected `src dst state`, got {} fields",
            fields.len()
        )));
    }
    let src: u32 = fields[0]
        .parse()
        .map_err(|_| parse_err(format!("bad source `{}`", fields[0])))?;
    let dst: u32 = fields[1]
        .parse()
        .map_err(|_| parse_err(format!("bad destination `{}`", fields[1])))?;
    let state: StateIndex = fields[2]
        .parse()
        .map_err(|_| parse_err(format!("bad state `{}`", fields[2])))?;
    TemporalEdge::new(src, dst, state).map_err(|e| parse_err(e.to_string()))
}

/// Union of two graphs.
pub fn merge(a: &ObservationGraph, b: &ObservationGraph) -> ObservationGraph {
    let mut out = a.clone();
    out.merge_from(b);
    out
}

/// Strongly connected components of the static projection of a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condensation {
    components: Vec<Vec<ProcessId>>,
    component_of: BTreeMap<ProcessId, usize>,
    dag: BTreeSet<(usize, usize)>,
}

impl Condensation {
    /// Components, each sorted, ordered by their smallest member.
    pub fn components(&self) -> &[Vec<ProcessId>] {
        &self.components
    }

    pub fn component_of(&self, p: ProcessId) -> Option<usize> {
        self.component_of.get(&p).copied()
    }

    /// Arcs between distinct components, by component index.
    pub fn dag(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.dag.iter().copied()
    }

    /// Number of arcs entering each component from another component.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.components.len()];
        for &(_, to) in &self.dag {
            deg[to] += 1;
        }
        deg
    }
}

pub fn condense(g: &ObservationGraph) -> Condensation {
    let nodes: Vec<ProcessId> = g.nodes().collect();
    let index_of = |p: ProcessId| nodes.binary_search(&p).expect("arc endpoint is a node");
    let mut adj = vec![Vec::new(); nodes.len()];
    for (u, v) in g.arcs() {
        adj[index_of(u)].push(index_of(v));
    }

    let mut raw = tarjan(&adj);
    for comp in &mut raw {
        comp.sort_unstable();
    }
    // node indices are sorted like the ids, so sorting by first index orders
    // components by smallest member
    raw.sort_unstable_by_key(|c| c[0]);

    let mut comp_of_index = vec![0; nodes.len()];
    for (ci, comp) in raw.iter().enumerate() {
        for &v in comp {
            comp_of_index[v] = ci;
        }
    }
    let mut dag = BTreeSet::new();
    for (u, outs) in adj.iter().enumerate() {
        for &v in outs {
            let (cu, cv) = (comp_of_index[u], comp_of_index[v]);
            if cu != cv {
                dag.insert((cu, cv));
            }
        }
    }
    let components: Vec<Vec<ProcessId>> = raw
        .iter()
        .map(|c| c.iter().map(|&v| nodes[v]).collect())
        .collect();
    let component_of = nodes
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, comp_of_index[i]))
        .collect();
    Condensation {
        components,
        component_of,
        dag,
    }
}

/// Iterative Tarjan over an adjacency list.
fn tarjan(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut call: Vec<(usize, usize)> = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0;

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        call.push((root, 0));

        while let Some(frame) = call.last_mut() {
            let v = frame.0;
            if frame.1 < adj[v].len() {
                let w = adj[v][frame.1];
                frame.1 += 1;
                if index[w] == UNVISITED {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comps.push(comp);
            }
        }
    }
    comps
}

/// Every knot of `g` with at least `min_size` members, sorted.
pub fn find_knots(g: &ObservationGraph, min_size: MinKnotSize) -> Vec<Knot> {
    let cond = condense(g);
    let in_deg = cond.in_degrees();
    let mut knots: Vec<Knot> = cond
        .components
        .iter()
        .zip(in_deg)
        .filter(|(comp, deg)| *deg == 0 && comp.len() >= min_size.get())
        .map(|(comp, _)| Knot(comp.clone()))
        .collect();
    knots.sort();
    knots
}

/// Brute-force knot search from pairwise reachability.
///
/// A node is in a knot iff every node that reaches it is also reachable from
/// it; knot nodes that reach each other are grouped. Quadratic, intended as a
/// cross-check for [`find_knots`].
pub fn reachability_knots(g: &ObservationGraph, min_size: MinKnotSize) -> Vec<Knot> {
    let nodes: Vec<ProcessId> = g.nodes().collect();
    let n = nodes.len();
    let index_of = |p: ProcessId| nodes.binary_search(&p).expect("arc endpoint is a node");
    let mut adj = vec![Vec::new(); n];
    for (u, v) in g.arcs() {
        adj[index_of(u)].push(index_of(v));
    }
    // reach[i][j]: j reachable from i (reflexive)
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|start| {
            let mut seen = vec![false; n];
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen
        })
        .collect();

    let in_knot: Vec<bool> = (0..n)
        .map(|p| (0..n).all(|q| !reach[q][p] || reach[p][q]))
        .collect();

    let mut grouped = vec![false; n];
    let mut knots = Vec::new();
    for p in 0..n {
        if !in_knot[p] || grouped[p] {
            continue;
        }
        let group: Vec<usize> = (0..n)
            .filter(|&q| in_knot[q] && reach[p][q] && reach[q][p])
            .collect();
        for &q in &group {
            grouped[q] = true;
        }
        if group.len() >= min_size.get() {
            knots.push(Knot(group.into_iter().map(|i| nodes[i]).collect()));
        }
    }
    knots.sort();
    knots
}
