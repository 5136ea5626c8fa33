use std::collections::BTreeMap;

use kia::adversary::scenarios::{self, A, B, C, D, E};
use kia::adversary::{check_primary_uniform, gen_backbone, gen_computation, insert_noncomm_states, worst_case_schedule};
use kia::engine::{longest_output_time, run, verify, RunConfig};
use kia::graph::{find_knots, Knot, MinKnotSize, ProcessId};
use kia::protocol::decide_consensus;
use kia::schedule::computation_graph;

fn knot(members: &[u32]) -> Knot {
    Knot::new(members.iter().copied()).unwrap()
}

fn rounds(t: &kia::engine::Trace, p: u32) -> Vec<(Knot, u64)> {
    t.processes[p as usize]
        .observations
        .iter()
        .map(|o| (o.knot.clone(), o.round))
        .collect()
}

// Traced by hand: the old knot reaches e over d -> e in state 5; the new one
// first completes at d in state 8 via a -> d carrying c -> a.
#[test]
fn knot_formation_trace() {
    let t = run(&scenarios::knot_formation(), RunConfig::default()).unwrap();
    let (k1, k2) = (knot(&[B, C, D]), knot(&[A, B, C, D]));
    assert_eq!(rounds(&t, D), [(k1.clone(), 4), (k2.clone(), 8)]);
    assert_eq!(rounds(&t, E), [(k1.clone(), 5), (k2.clone(), 9)]);
    assert_eq!(rounds(&t, C), [(k2.clone(), 9)]);
    assert_eq!(rounds(&t, A), [(k2.clone(), 10)]);
    assert_eq!(rounds(&t, B), [(k2.clone(), 10)]);
    assert_eq!(longest_output_time(&t), Some(10));

    let v = verify(&t);
    assert!(v.termination);
    assert!(!v.agreement, "d and e keep the dead knot as their primary");
    assert_eq!(t.final_knots, vec![k2]);
}

#[test]
fn knot_formation_is_not_primary_uniform() {
    let r = check_primary_uniform(&scenarios::knot_formation(), MinKnotSize::DEFAULT).unwrap();
    assert!(!r.uniform);
    assert_eq!(r.knots.len(), 2);
}

#[test]
fn worst_case_closes_at_n_and_reaches_the_tail_at_2n_minus_1() {
    for n in 2..=64usize {
        let s = worst_case_schedule(n).unwrap();
        assert_eq!(s.horizon(), 2 * n as u64 - 1);
        let t = run(&s, RunConfig::default()).unwrap();
        let out: Vec<u64> = t.processes.iter().map(|p| p.output.as_ref().unwrap().round).collect();
        assert_eq!(out[0], n as u64, "n={n}");
        for (i, &r) in out.iter().enumerate().skip(1) {
            assert_eq!(r, (n + i) as u64, "n={n} process {i}");
        }
        assert!(verify(&t).holds());
    }
}

#[test]
fn worst_case_output_grows_linearly_with_interleaved_silence() {
    let s = worst_case_schedule(8).unwrap();
    let every: Vec<u64> = (0..=s.horizon()).collect();
    let padded = insert_noncomm_states(&s, &every).unwrap();
    assert_eq!(padded.horizon(), 2 * s.horizon() + 1);
    let t = run(&padded, RunConfig::default()).unwrap();
    assert_eq!(longest_output_time(&t), Some(2 * 15));
}

#[test]
fn backbone_runs_decide_the_cycle_and_reduce_consensus() {
    for seed in 0..5 {
        let b = gen_backbone(30, 6, seed).unwrap();
        let s = gen_computation(&b, 4, 2000, seed).unwrap();
        let t = run(&s, RunConfig { stop_when_decided: true, ..RunConfig::default() }).unwrap();
        let v = verify(&t);
        assert!(v.holds(), "seed {seed}: {:?}", v.diagnostics);
        let k = v.knot.unwrap();
        assert_eq!(k, b.cycle_knot());
        assert!(t.rounds_executed < s.horizon());

        let inputs: BTreeMap<ProcessId, bool> = s.processes().map(|p| (p, p.0.is_multiple_of(3))).collect();
        assert_eq!(decide_consensus(&k, &inputs).unwrap(), k.max_member().0.is_multiple_of(3));
    }
}

#[test]
fn every_generated_link_eventually_appears() {
    let b = gen_backbone(20, 5, 11).unwrap();
    let s = gen_computation(&b, 2, 3000, 11).unwrap();
    let g = computation_graph(&s, s.horizon()).unwrap();
    let mut arcs: Vec<_> = g.arcs().collect();
    let mut links = b.links();
    arcs.sort();
    links.sort();
    assert_eq!(arcs, links);
    assert_eq!(find_knots(&g, MinKnotSize::DEFAULT), vec![b.cycle_knot()]);
}

#[test]
fn larger_min_knot_size_ignores_small_cycles() {
    let s = scenarios::disjoint_two_cycles();
    let t = run(&s, RunConfig { min_knot_size: MinKnotSize::new(3).unwrap(), ..RunConfig::default() }).unwrap();
    assert!(t.processes.iter().all(|p| p.output.is_none()));
    assert!(!verify(&t).termination);
}
