//! Transition-covering stimulus planning.
//!
//! For every priority-feasible explicit transition `(u, i)` the planner
//! walks a shortest path from the current machine state to `u`, drives
//! the witness valuation of each path edge, then the witness of `(u, i)`.
//! The whole plan is one contiguous sequence after a single reset. A
//! seeded uniform random tail follows the covering segments.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::guard::{solve_priority, GuardError, InputValuation, MAX_ENUM_INPUTS};
use crate::model::SemanticFsm;
use crate::rng::{derive_seed, DetRng};
use crate::sim::{CompiledFsm, EdgeRef, SimError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StimError {
    #[error("{0} inputs exceed the enumeration bound of {MAX_ENUM_INPUTS}")]
    Capacity(usize),
    #[error(transparent)]
    Guard(#[from] GuardError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub target: EdgeRef,
    pub valuations: Vec<InputValuation>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StimulusPlan {
    pub segments: Vec<Segment>,
    pub random_tail: Vec<InputValuation>,
    pub seed: u64,
    /// Feasible edges the contiguous plan could not reach from where the
    /// machine was left. Always empty when every state can reach every
    /// feasible edge source.
    pub unreached: Vec<EdgeRef>,
}

impl StimulusPlan {
    pub fn valuations(&self) -> Vec<InputValuation> {
        self.segments
            .iter()
            .flat_map(|s| s.valuations.iter().cloned())
            .chain(self.random_tail.iter().cloned())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.valuations.len()).sum::<usize>() + self.random_tail.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// JSON sidecar: segment boundaries plus every cycle that takes an
    /// explicit transition, flagging first-time coverage.
    pub fn coverage_sidecar(&self, f: &SemanticFsm) -> Result<serde_json::Value, StimError> {
        #[derive(Serialize)]
        struct SegmentEntry<'a> {
            state: &'a str,
            index: usize,
            start: usize,
            len: usize,
        }
        #[derive(Serialize)]
        struct CycleEntry {
            cycle: usize,
            state: String,
            index: usize,
            new: bool,
        }
        let c = CompiledFsm::new(f)?;
        let mut start = 0;
        let segments: Vec<SegmentEntry> = self
            .segments
            .iter()
            .map(|s| {
                let e = SegmentEntry {
                    state: &s.target.state,
                    index: s.target.index,
                    start,
                    len: s.valuations.len(),
                };
                start += s.valuations.len();
                e
            })
            .collect();
        let mut seen = BTreeSet::new();
        let mut cycles = Vec::new();
        let mut s = c.reset;
        for (t, v) in self.valuations().iter().enumerate() {
            let (next, taken) = c.step(s, c.valuation_index(v)?);
            if let Some(i) = taken {
                cycles.push(CycleEntry {
                    cycle: t,
                    state: f.states[s].name.clone(),
                    index: i,
                    new: seen.insert((s, i)),
                });
            }
            s = next;
        }
        Ok(serde_json::json!({
            "seed": self.seed,
            "segments": segments,
            "tail_start": start,
            "tail_len": self.random_tail.len(),
            "covered": cycles,
        }))
    }
}

/// A feasible edge with its lowest witness valuation.
#[derive(Clone, Copy, Debug)]
struct Feasible {
    state: usize,
    index: usize,
    target: usize,
    witness: u64,
}

fn feasible_table(c: &CompiledFsm<'_>) -> Result<Vec<Feasible>, StimError> {
    let f = c.fsm;
    if f.inputs.len() > MAX_ENUM_INPUTS {
        return Err(StimError::Capacity(f.inputs.len()));
    }
    // witnesses first, independent of reachability
    let mut witnessed: Vec<Vec<Option<(u64, usize)>>> = Vec::with_capacity(f.states.len());
    for (si, s) in f.states.iter().enumerate() {
        let mut row = Vec::with_capacity(s.transitions.len());
        for (i, target) in c.edges(si) {
            let w = solve_priority(s, i, &f.inputs)?
                .map(|v| v.index_for(&f.inputs).expect("own domain"));
            row.push(w.map(|w| (w, target)));
        }
        witnessed.push(row);
    }
    let mut reachable = vec![false; f.states.len()];
    reachable[c.reset] = true;
    let mut queue = VecDeque::from([c.reset]);
    while let Some(u) = queue.pop_front() {
        for &(_, t) in witnessed[u].iter().flatten() {
            if !reachable[t] {
                reachable[t] = true;
                queue.push_back(t);
            }
        }
    }
    let mut out = Vec::new();
    for (si, row) in witnessed.iter().enumerate() {
        if !reachable[si] {
            continue;
        }
        for (i, w) in row.iter().enumerate() {
            if let Some((witness, target)) = *w {
                out.push(Feasible { state: si, index: i, target, witness });
            }
        }
    }
    Ok(out)
}

pub fn feasible_edges(f: &SemanticFsm) -> Result<BTreeSet<EdgeRef>, StimError> {
    let c = CompiledFsm::new(f)?;
    Ok(feasible_table(&c)?
        .into_iter()
        .map(|e| EdgeRef::new(f.states[e.state].name.clone(), e.index))
        .collect())
}

/// Explicit edges that no stimulus can exercise.
pub fn infeasible_edges(f: &SemanticFsm) -> Result<Vec<EdgeRef>, StimError> {
    let feasible = feasible_edges(f)?;
    Ok(f.states
        .iter()
        .flat_map(|s| (0..s.transitions.len()).map(move |i| EdgeRef::new(s.name.clone(), i)))
        .filter(|e| !feasible.contains(e))
        .collect())
}

pub fn default_tail_len(f: &SemanticFsm) -> usize {
    2 * f.explicit_edge_count()
}

const TAIL_STREAM: u64 = 0x7461_696c;

/// Shortest path from `from` to `to` over feasible edges; BFS expands
/// edges in (state, priority) declaration order so ties resolve to the
/// earliest-declared edge.
fn shortest_path(
    adjacency: &[Vec<Feasible>],
    from: usize,
    to: usize,
) -> Option<Vec<Feasible>> {
    if from == to {
        return Some(Vec::new());
    }
    let mut pred: Vec<Option<Feasible>> = vec![None; adjacency.len()];
    let mut seen = vec![false; adjacency.len()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &e in &adjacency[u] {
            if !seen[e.target] {
                seen[e.target] = true;
                pred[e.target] = Some(e);
                if e.target == to {
                    let mut path = Vec::new();
                    let mut cur = to;
                    while cur != from {
                        let p = pred[cur].expect("on path");
                        path.push(p);
                        cur = p.state;
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(e.target);
            }
        }
    }
    None
}

pub fn plan(f: &SemanticFsm, seed: u64, tail_len: usize) -> Result<StimulusPlan, StimError> {
    let c = CompiledFsm::new(f)?;
    let feasible = feasible_table(&c)?;
    let mut adjacency: Vec<Vec<Feasible>> = vec![Vec::new(); f.states.len()];
    for &e in &feasible {
        adjacency[e.state].push(e);
    }

    let mut covered: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut segments = Vec::new();
    let mut current = c.reset;
    loop {
        let mut progress = false;
        for e in &feasible {
            if covered.contains(&(e.state, e.index)) {
                continue;
            }
            let Some(mut path) = shortest_path(&adjacency, current, e.state) else {
                continue;
            };
            path.push(*e);
            let valuations = path
                .iter()
                .map(|p| InputValuation::from_index(&f.inputs, p.witness))
                .collect();
            for p in &path {
                covered.insert((p.state, p.index));
            }
            current = e.target;
            segments.push(Segment {
                target: EdgeRef::new(f.states[e.state].name.clone(), e.index),
                valuations,
            });
            progress = true;
        }
        if !progress || covered.len() == feasible.len() {
            break;
        }
    }
    let unreached = feasible
        .iter()
        .filter(|e| !covered.contains(&(e.state, e.index)))
        .map(|e| EdgeRef::new(f.states[e.state].name.clone(), e.index))
        .collect();

    let mut rng = DetRng::new(derive_seed(seed, TAIL_STREAM));
    let space = 1u64 << f.inputs.len();
    let random_tail = (0..tail_len)
        .map(|_| InputValuation::from_index(&f.inputs, rng.below(space)))
        .collect();

    Ok(StimulusPlan { segments, random_tail, seed, unreached })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests::{machine, toggle, vals};
    use crate::sim::{coverage, run};

    #[test]
    fn toggle_feasible_and_plan() {
        let f = toggle();
        assert_eq!(
            feasible_edges(&f).unwrap(),
            BTreeSet::from([EdgeRef::new("A", 0), EdgeRef::new("B", 0)])
        );
        let p = plan(&f, 1, 0).unwrap();
        assert_eq!(p.valuations(), vals(&f, &[&[1], &[1]]));
        assert_eq!(p.segments.len(), 2);
        assert!(p.unreached.is_empty());
    }

    #[test]
    fn shadowed_edge_is_infeasible() {
        let f = machine(
            &["a"],
            &[("q", 1)],
            &[("S", &[0], &[("a", "X"), ("a", "Y")]), ("X", &[0], &[]), ("Y", &[1], &[])],
        );
        let fe = feasible_edges(&f).unwrap();
        assert!(fe.contains(&EdgeRef::new("S", 0)));
        assert!(!fe.contains(&EdgeRef::new("S", 1)));
        assert_eq!(infeasible_edges(&f).unwrap(), vec![EdgeRef::new("S", 1)]);
    }

    #[test]
    fn unreachable_source_is_infeasible() {
        let f = machine(
            &["a"],
            &[("q", 1)],
            &[("S", &[0], &[("0", "X")]), ("X", &[0], &[("a", "S")])],
        );
        assert_eq!(feasible_edges(&f).unwrap(), BTreeSet::new());
    }

    #[test]
    fn single_state_self_loop() {
        let f = machine(&["a"], &[("q", 1)], &[("S", &[0], &[("a", "S")])]);
        let p = plan(&f, 0, 0).unwrap();
        assert_eq!(p.valuations(), vals(&f, &[&[1]]));
    }

    #[test]
    fn prefix_soundness_and_coverage() {
        let f = machine(
            &["a", "b"],
            &[("q", 2)],
            &[
                ("S0", &[0], &[("a & b", "S2"), ("a", "S1"), ("b", "S0")]),
                ("S1", &[1], &[("!a", "S2"), ("1", "S0")]),
                ("S2", &[2], &[("b", "S1"), ("a & !b", "S2")]),
            ],
        );
        let p = plan(&f, 3, 5).unwrap();
        let c = CompiledFsm::new(&f).unwrap();
        let mut s = c.reset;
        for seg in &p.segments {
            for v in &seg.valuations {
                s = c.step(s, c.valuation_index(v).unwrap()).0;
            }
            let src = f.state_index(&seg.target.state).unwrap();
            let dst = c.edges(src).nth(seg.target.index).unwrap().1;
            assert_eq!(s, dst);
        }
        assert_eq!(p.random_tail.len(), 5);
        let cov = coverage(&f, &p.valuations()).unwrap();
        assert_eq!(cov.edges, feasible_edges(&f).unwrap());
        assert_eq!(run(&f, &p.valuations()).unwrap().len(), p.len());
    }

    #[test]
    fn deterministic_plans() {
        let f = toggle();
        assert_eq!(plan(&f, 9, 10).unwrap(), plan(&f, 9, 10).unwrap());
        assert_ne!(plan(&f, 9, 10).unwrap().random_tail, plan(&f, 10, 10).unwrap().random_tail);
    }

    #[test]
    fn capacity_error() {
        let names: Vec<String> = (0..21).map(|i| format!("i{i}")).collect();
        let mut f = toggle();
        f.inputs = names;
        f.inputs[0] = "en".into();
        assert_eq!(plan(&f, 0, 0), Err(StimError::Capacity(21)));
    }

    #[test]
    fn sidecar_lists_first_coverage() {
        let f = toggle();
        let p = plan(&f, 0, 4).unwrap();
        let side = p.coverage_sidecar(&f).unwrap();
        assert_eq!(side["tail_start"], 2);
        let news = side["covered"].as_array().unwrap().iter().filter(|c| c["new"] == true).count();
        assert_eq!(news, 2);
    }

    #[test]
    fn dead_end_leaves_unreached() {
        // S0 -> S1 (a) and S0 -> S2 (!a); S1 and S2 are sinks with self-loops
        let f = machine(
            &["a"],
            &[("q", 2)],
            &[
                ("S0", &[0], &[("a", "S1"), ("!a", "S2")]),
                ("S1", &[1], &[("a", "S1")]),
                ("S2", &[2], &[("a", "S2")]),
            ],
        );
        let p = plan(&f, 0, 0).unwrap();
        assert_eq!(p.unreached.len(), 2);
        let cov = coverage(&f, &p.valuations()).unwrap();
        assert_eq!(cov.edges.len(), 2);
    }
}
