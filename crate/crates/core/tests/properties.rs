use std::collections::{BTreeSet, VecDeque};

use kia::adversary::{gen_backbone, gen_computation, insert_noncomm_states};
use kia::engine::{run, RunConfig, Simulation};
use kia::graph::{condense, find_knots, merge, reachability_knots, MinKnotSize, ObservationGraph, ProcessId, TemporalEdge};
use kia::schedule::{computation_graph, Schedule};
use proptest::prelude::*;

const MIN: MinKnotSize = MinKnotSize::DEFAULT;

fn edges_strategy(max_nodes: u32, max_edges: usize) -> impl Strategy<Value = Vec<TemporalEdge>> {
    prop::collection::vec((0..max_nodes, 0..max_nodes, 0u64..6), 0..max_edges).prop_map(|raw| {
        raw.into_iter()
            .filter_map(|(s, d, t)| TemporalEdge::new(s, d, t).ok())
            .collect()
    })
}

fn graph_strategy() -> impl Strategy<Value = ObservationGraph> {
    edges_strategy(8, 30).prop_map(ObservationGraph::from_edges)
}

fn reaches(g: &ObservationGraph, from: ProcessId, to: ProcessId) -> bool {
    let arcs: Vec<_> = g.arcs().collect();
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            return true;
        }
        for &(a, b) in &arcs {
            if a == u && seen.insert(b) {
                queue.push_back(b);
            }
        }
    }
    false
}

proptest! {
    #[test]
    fn fast_and_brute_force_knots_agree(g in graph_strategy(), min in 2usize..5) {
        let min = MinKnotSize::new(min).unwrap();
        prop_assert_eq!(find_knots(&g, min), reachability_knots(&g, min));
    }

    #[test]
    fn knots_are_closed_and_strongly_connected(g in graph_strategy()) {
        for k in find_knots(&g, MIN) {
            for &a in k.members() {
                for &b in k.members() {
                    prop_assert!(reaches(&g, a, b));
                }
            }
            for (u, v) in g.arcs() {
                prop_assert!(!(k.contains(v) && !k.contains(u)), "incoming arc {}->{}", u, v);
            }
        }
    }

    #[test]
    fn knots_ignore_insertion_order_and_stamps(
        edges in edges_strategy(8, 30),
        shift in 1u64..50,
    ) {
        let g = ObservationGraph::from_edges(edges.iter().copied());
        let reversed = ObservationGraph::from_edges(edges.iter().rev().copied());
        let restamped = ObservationGraph::from_edges(
            edges.iter().enumerate().map(|(i, e)| e.restamped(e.state() * shift + i as u64)),
        );
        prop_assert_eq!(&g, &reversed);
        let knots = find_knots(&g, MIN);
        prop_assert_eq!(&find_knots(&restamped, MIN), &knots);
    }

    #[test]
    fn condensation_partitions_into_a_dag(g in graph_strategy()) {
        let c = condense(&g);
        let mut all: Vec<ProcessId> = c.components().iter().flatten().copied().collect();
        let count = all.len();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), count, "components overlap");
        prop_assert_eq!(all, g.nodes().collect::<Vec<_>>());

        // acyclic: repeatedly peel components with no incoming arc
        let k = c.components().len();
        let dag: Vec<(usize, usize)> = c.dag().collect();
        let mut indeg = vec![0usize; k];
        for &(_, b) in &dag {
            indeg[b] += 1;
        }
        let mut ready: Vec<usize> = (0..k).filter(|&i| indeg[i] == 0).collect();
        let mut removed = 0;
        while let Some(i) = ready.pop() {
            removed += 1;
            for &(a, b) in &dag {
                if a == i {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        ready.push(b);
                    }
                }
            }
        }
        prop_assert_eq!(removed, k);
    }

    #[test]
    fn merge_is_a_semilattice_join(a in graph_strategy(), b in graph_strategy(), c in graph_strategy()) {
        prop_assert_eq!(merge(&a, &b), merge(&b, &a));
        prop_assert_eq!(merge(&merge(&a, &b), &c), merge(&a, &merge(&b, &c)));
        prop_assert_eq!(merge(&a, &a), a.clone());
        let ab = merge(&a, &b);
        prop_assert!(a.is_subgraph_of(&ab) && b.is_subgraph_of(&ab));
        prop_assert_eq!(ab.edge_count(), ab.edges().count());
    }

    #[test]
    fn edge_list_round_trip(g in graph_strategy()) {
        let back = ObservationGraph::from_edge_list(&g.to_edge_list()).unwrap();
        prop_assert_eq!(back.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
    }

    #[test]
    fn schedule_text_round_trip(
        states in prop::collection::vec(prop::collection::vec((0u32..6, 0u32..6), 0..4), 0..12),
        seed in any::<u64>(),
    ) {
        let states: Vec<Vec<(u32, u32)>> = states
            .into_iter()
            .map(|s| s.into_iter().filter(|(a, b)| a != b).collect())
            .collect();
        let s = Schedule::from_links(6, states, "prop", seed).unwrap();
        prop_assert_eq!(Schedule::from_text(&s.to_text()).unwrap(), s);
    }
}

fn random_schedule() -> impl Strategy<Value = Schedule> {
    (2usize..9, prop::collection::vec(prop::collection::vec((0u32..9, 0u32..9), 0..4), 1..25)).prop_map(
        |(n, states)| {
            let n32 = n as u32;
            let states: Vec<Vec<(u32, u32)>> = states
                .into_iter()
                .map(|s| {
                    s.into_iter()
                        .map(|(a, b)| (a % n32, b % n32))
                        .filter(|(a, b)| a != b)
                        .collect()
                })
                .collect();
            Schedule::from_links(n, states, "random", 0).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn engine_invariants_hold_every_round(s in random_schedule()) {
        let mut sim = Simulation::new(&s, RunConfig::default());
        let mut prev: Vec<ObservationGraph> = sim.processes().iter().map(|p| p.view().clone()).collect();
        let mut outputs: Vec<Option<_>> = vec![None; s.n()];
        while let Some(round) = sim.step().unwrap() {
            let g = computation_graph(&s, round).unwrap();
            let has_in_link: BTreeSet<ProcessId> = s.state(round).unwrap().iter().map(|e| e.dst()).collect();
            for (i, p) in sim.processes().iter().enumerate() {
                prop_assert!(p.view().is_subgraph_of(&g), "view of {} escapes G at {}", i, round);
                prop_assert!(prev[i].is_subgraph_of(p.view()), "view of {} shrank at {}", i, round);
                match (&outputs[i], p.output()) {
                    (Some(before), now) => prop_assert_eq!(Some(before), now),
                    (None, Some(o)) => {
                        prop_assert_eq!(o.round, round);
                        prop_assert!(has_in_link.contains(&p.id()));
                        prop_assert!(find_knots(p.view(), MIN).contains(&o.knot));
                        prop_assert_eq!(&p.observations()[0], o);
                        outputs[i] = Some(o.clone());
                    }
                    (None, None) => {}
                }
                prev[i] = p.view().clone();
            }
        }
    }

    #[test]
    fn runs_are_deterministic(s in random_schedule()) {
        let a = run(&s, RunConfig::default()).unwrap();
        let b = run(&s, RunConfig::default()).unwrap();
        prop_assert_eq!(a.outputs_csv(), b.outputs_csv());
        prop_assert_eq!(&a, &b);
    }

    #[test]
    fn payload_metrics_are_bounded(s in random_schedule()) {
        let t = run(&s, RunConfig::default()).unwrap();
        for r in &t.rounds {
            let prior = computation_graph(&s, r.round - 1).unwrap().edge_count();
            prop_assert!(r.payload_edges <= r.messages * prior);
        }
    }

    #[test]
    fn padding_shifts_rounds_and_keeps_knots(
        s in random_schedule(),
        raw in prop::collection::vec(any::<u64>(), 1..20),
    ) {
        let positions: Vec<u64> = raw.iter().map(|r| r % (s.horizon() + 1)).collect();
        let padded = insert_noncomm_states(&s, &positions).unwrap();
        let a = run(&s, RunConfig::default()).unwrap();
        let b = run(&padded, RunConfig::default()).unwrap();
        for (x, y) in a.processes.iter().zip(&b.processes) {
            prop_assert_eq!(x.observations.len(), y.observations.len());
            for (ox, oy) in x.observations.iter().zip(&y.observations) {
                let before = positions.iter().filter(|&&p| p < ox.round).count() as u64;
                prop_assert_eq!(&ox.knot, &oy.knot);
                prop_assert_eq!(ox.round + before, oy.round);
            }
        }
    }
}

#[test]
fn backbones_always_have_the_cycle_as_only_knot() {
    for seed in 0..200u64 {
        let n = 2 + (seed as usize % 40);
        let k = 2 + (seed as usize * 7) % (n - 1);
        let b = gen_backbone(n, k, seed).unwrap();
        assert_eq!(find_knots(&b.static_graph(), MIN), vec![b.cycle_knot()], "n={n} k={k}");
        assert_eq!(reachability_knots(&b.static_graph(), MIN), vec![b.cycle_knot()]);
    }
}

#[test]
fn computations_only_use_backbone_links() {
    let b = gen_backbone(25, 5, 8).unwrap();
    let links: BTreeSet<_> = b.links().into_iter().collect();
    let s = gen_computation(&b, 7, 300, 8).unwrap();
    for (_, edges) in s.states() {
        assert_eq!(edges.len(), 7);
        for e in edges {
            assert!(links.contains(&(e.src(), e.dst())));
        }
    }
    assert_eq!(s, gen_computation(&b, 7, 300, 8).unwrap());
    assert_ne!(s, gen_computation(&b, 7, 300, 9).unwrap());
}
