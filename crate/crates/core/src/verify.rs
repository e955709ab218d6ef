//! Topology preservation and behavioral equivalence.
//!
//! Equivalence is decided by explicit-state reachability over the
//! synchronous product of two Moore machines: every reachable state pair
//! is expanded under all `2^|inputs|` valuations, and a pair whose output
//! maps differ is a divergence. With the default depth bound
//! (`|S_a| * |S_b|`) the search is exhaustive.

use std::collections::{BTreeSet, VecDeque};

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use thiserror::Error;

use crate::guard::{InputValuation, MAX_ENUM_INPUTS};
use crate::model::{AbstractGraph, SemanticFsm, StateId, StateMapping};
use crate::sim::{CompiledFsm, SimError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("state mapping is not a bijection onto the FSM states: {0}")]
    Mapping(String),
    #[error("I/O interfaces differ: {}", .0.join(", "))]
    Interface(Vec<String>),
    #[error("{0} inputs exceed the enumeration bound of {MAX_ENUM_INPUTS}")]
    Capacity(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeViolation {
    /// Present in the abstract graph, absent from the FSM.
    MissingInFsm,
    /// Present in the FSM, absent from the abstract graph.
    ExtraInFsm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IsoViolation {
    pub from: StateId,
    pub to: StateId,
    pub from_name: String,
    pub to_name: String,
    pub kind: EdgeViolation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IsoResult {
    pub isomorphic: bool,
    pub violation: Option<IsoViolation>,
}

pub fn check_isomorphism(
    g: &AbstractGraph,
    f: &SemanticFsm,
    m: &StateMapping,
) -> Result<IsoResult, VerifyError> {
    let ids: BTreeSet<StateId> = g.states.iter().copied().collect();
    let keys: BTreeSet<StateId> = m.pairs.keys().copied().collect();
    if ids != keys {
        return Err(VerifyError::Mapping(format!(
            "domain {keys:?} differs from graph states {ids:?}"
        )));
    }
    let image = m.names();
    if image.len() != m.pairs.len() {
        return Err(VerifyError::Mapping("two ids map to the same state".into()));
    }
    let fsm_names: BTreeSet<&str> = f.states.iter().map(|s| s.name.as_str()).collect();
    if image != fsm_names || fsm_names.len() != f.states.len() {
        return Err(VerifyError::Mapping("image differs from the FSM state set".into()));
    }

    let inverse: std::collections::BTreeMap<&str, StateId> =
        m.pairs.iter().map(|(&id, n)| (n.as_str(), id)).collect();
    let fsm_edges: BTreeSet<(StateId, StateId)> = f
        .edge_pairs()
        .iter()
        .filter_map(|(u, v)| Some((*inverse.get(u.as_str())?, *inverse.get(v.as_str())?)))
        .collect();

    let first = g
        .edges
        .symmetric_difference(&fsm_edges)
        .min()
        .copied();
    Ok(match first {
        None => IsoResult { isomorphic: true, violation: None },
        Some((u, v)) => IsoResult {
            isomorphic: false,
            violation: Some(IsoViolation {
                from: u,
                to: v,
                from_name: m.pairs[&u].clone(),
                to_name: m.pairs[&v].clone(),
                kind: if g.edges.contains(&(u, v)) {
                    EdgeViolation::MissingInFsm
                } else {
                    EdgeViolation::ExtraInFsm
                },
            }),
        },
    })
}

impl Serialize for InputValuation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.entries().len()))?;
        for (name, bit) in self.entries() {
            map.serialize_entry(name, &u8::from(*bit))?;
        }
        map.end()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EquivVerdict {
    pub equivalent: bool,
    pub counterexample: Option<Vec<InputValuation>>,
    pub mismatch_cycle: Option<usize>,
    pub mismatch_output: Option<String>,
}

/// Search statistics accompanying a verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProductStats {
    pub pairs_explored: usize,
    /// False when the depth bound cut the search short.
    pub complete: bool,
}

/// `b` with its input and output declarations reordered to match `a`.
fn aligned(a: &SemanticFsm, b: &SemanticFsm) -> Result<SemanticFsm, VerifyError> {
    let diff = a.interface_diff(b);
    if !diff.is_empty() {
        return Err(VerifyError::Interface(diff));
    }
    Ok(SemanticFsm { inputs: a.inputs.clone(), outputs: a.outputs.clone(), ..b.clone() })
}

pub fn check_equivalence(
    a: &SemanticFsm,
    b: &SemanticFsm,
    max_depth: Option<usize>,
) -> Result<EquivVerdict, VerifyError> {
    check_equivalence_with_stats(a, b, max_depth).map(|(v, _)| v)
}

pub fn check_equivalence_with_stats(
    a: &SemanticFsm,
    b: &SemanticFsm,
    max_depth: Option<usize>,
) -> Result<(EquivVerdict, ProductStats), VerifyError> {
    let b = aligned(a, b)?;
    if a.inputs.len() > MAX_ENUM_INPUTS {
        return Err(VerifyError::Capacity(a.inputs.len()));
    }
    let ca = CompiledFsm::new(a)?;
    let cb = CompiledFsm::new(&b)?;
    let (na, nb) = (ca.num_states(), cb.num_states());
    let max_depth = max_depth.unwrap_or(na * nb);
    let space = 1u64 << a.inputs.len();

    let diverge = |pa: usize, pb: usize| {
        ca.outputs(pa)
            .iter()
            .zip(cb.outputs(pb))
            .position(|(x, y)| x != y)
            .map(|i| a.outputs[i].name.clone())
    };

    let pair_id = |pa: usize, pb: usize| pa * nb + pb;
    // parent[pair] = (previous pair, valuation index, depth)
    let mut parent: Vec<Option<(usize, u64, usize)>> = vec![None; na * nb];
    let mut visited = vec![false; na * nb];
    let start = (ca.reset, cb.reset);
    visited[pair_id(start.0, start.1)] = true;
    let mut explored = 1;

    if let Some(out) = diverge(start.0, start.1) {
        let verdict = EquivVerdict {
            equivalent: false,
            counterexample: Some(Vec::new()),
            mismatch_cycle: Some(0),
            mismatch_output: Some(out),
        };
        return Ok((verdict, ProductStats { pairs_explored: 1, complete: true }));
    }

    let mut complete = true;
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some(((pa, pb), depth)) = queue.pop_front() {
        if depth >= max_depth {
            complete = false;
            continue;
        }
        for v in 0..space {
            let qa = ca.step(pa, v).0;
            let qb = cb.step(pb, v).0;
            let id = pair_id(qa, qb);
            if visited[id] {
                continue;
            }
            visited[id] = true;
            explored += 1;
            parent[id] = Some((pair_id(pa, pb), v, depth + 1));
            if let Some(out) = diverge(qa, qb) {
                let mut cex = Vec::with_capacity(depth + 1);
                let mut cur = id;
                while let Some((prev, val, _)) = parent[cur] {
                    cex.push(InputValuation::from_index(&a.inputs, val));
                    cur = prev;
                }
                cex.reverse();
                let verdict = EquivVerdict {
                    equivalent: false,
                    mismatch_cycle: Some(cex.len()),
                    counterexample: Some(cex),
                    mismatch_output: Some(out),
                };
                return Ok((verdict, ProductStats { pairs_explored: explored, complete: true }));
            }
            queue.push_back(((qa, qb), depth + 1));
        }
    }
    let verdict = EquivVerdict {
        equivalent: true,
        counterexample: None,
        mismatch_cycle: None,
        mismatch_output: None,
    };
    Ok((verdict, ProductStats { pairs_explored: explored, complete }))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutputDiff {
    pub cycle: usize,
    pub output: String,
    pub value_a: u64,
    pub value_b: u64,
}

/// Simulates both machines over `cex` and lists every output difference
/// at cycles `0..=cex.len()` (the final entry is the state reached after
/// the last valuation).
pub fn replay_counterexample(
    a: &SemanticFsm,
    b: &SemanticFsm,
    cex: &[InputValuation],
) -> Result<Vec<OutputDiff>, VerifyError> {
    let b = aligned(a, b)?;
    let ca = CompiledFsm::new(a)?;
    let cb = CompiledFsm::new(&b)?;
    let idx = cex.iter().map(|v| ca.valuation_index(v)).collect::<Result<Vec<_>, _>>()?;
    let sa = ca.state_sequence(&idx);
    let sb = cb.state_sequence(&idx);
    let mut diffs = Vec::new();
    for (t, (&x, &y)) in sa.iter().zip(&sb).enumerate() {
        for (i, (&va, &vb)) in ca.outputs(x).iter().zip(cb.outputs(y)).enumerate() {
            if va != vb {
                diffs.push(OutputDiff {
                    cycle: t,
                    output: a.outputs[i].name.clone(),
                    value_a: va,
                    value_b: vb,
                });
            }
        }
    }
    Ok(diffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests::{machine, toggle, vals};
    use std::collections::BTreeMap;

    fn three_cycle(extra: &[(&str, &str)]) -> (AbstractGraph, SemanticFsm, StateMapping) {
        let g = AbstractGraph {
            states: vec![0, 1, 2],
            reset_state: 0,
            phases: vec![],
            edges: BTreeSet::from([(0, 1), (1, 2), (2, 0)]),
        };
        let mut run_edges = vec![("go", "DONE")];
        run_edges.extend_from_slice(extra);
        let f = machine(
            &["go"],
            &[("busy", 1)],
            &[
                ("IDLE", &[0], &[("go", "RUN")]),
                ("RUN", &[1], &run_edges),
                ("DONE", &[0], &[("1", "IDLE")]),
            ],
        );
        let m = StateMapping {
            pairs: BTreeMap::from([
                (0, "IDLE".to_string()),
                (1, "RUN".to_string()),
                (2, "DONE".to_string()),
            ]),
        };
        (g, f, m)
    }

    #[test]
    fn relabeled_cycle_is_isomorphic() {
        let (g, f, m) = three_cycle(&[]);
        let r = check_isomorphism(&g, &f, &m).unwrap();
        assert!(r.isomorphic && r.violation.is_none());
    }

    #[test]
    fn extra_self_loop_is_reported() {
        let (g, f, m) = three_cycle(&[("!go", "RUN")]);
        let r = check_isomorphism(&g, &f, &m).unwrap();
        assert!(!r.isomorphic);
        let v = r.violation.unwrap();
        assert_eq!((v.from_name.as_str(), v.to_name.as_str()), ("RUN", "RUN"));
        assert_eq!(v.kind, EdgeViolation::ExtraInFsm);
    }

    #[test]
    fn parallel_transitions_count_once() {
        let (g, f, m) = three_cycle(&[("!go", "DONE")]);
        assert!(check_isomorphism(&g, &f, &m).unwrap().isomorphic);
    }

    #[test]
    fn bad_mappings() {
        let (g, f, mut m) = three_cycle(&[]);
        m.pairs.insert(2, "RUN".into());
        assert!(matches!(check_isomorphism(&g, &f, &m), Err(VerifyError::Mapping(_))));
        let (g, f, mut m) = three_cycle(&[]);
        m.pairs.remove(&2);
        assert!(matches!(check_isomorphism(&g, &f, &m), Err(VerifyError::Mapping(_))));
    }

    #[test]
    fn reflexive_and_renamed() {
        let f = toggle();
        assert!(check_equivalence(&f, &f, None).unwrap().equivalent);
        let renamed = f.renamed(&BTreeMap::from([
            ("A".to_string(), "OFF".to_string()),
            ("B".to_string(), "ON".to_string()),
        ]));
        assert!(check_equivalence(&f, &renamed, None).unwrap().equivalent);
    }

    #[test]
    fn flipped_output_counterexample() {
        let f = toggle();
        let mut g = f.clone();
        g.states[1].outputs.insert("y".into(), 0);
        let v = check_equivalence(&f, &g, None).unwrap();
        assert!(!v.equivalent);
        assert_eq!(v.counterexample, Some(vals(&f, &[&[1]])));
        assert_eq!(v.mismatch_cycle, Some(1));
        assert_eq!(v.mismatch_output.as_deref(), Some("y"));

        let diffs = replay_counterexample(&f, &g, &vals(&f, &[&[1]])).unwrap();
        assert_eq!(
            diffs,
            vec![OutputDiff { cycle: 1, output: "y".into(), value_a: 1, value_b: 0 }]
        );
        assert!(replay_counterexample(&f, &f, &vals(&f, &[&[1], &[0]])).unwrap().is_empty());
    }

    #[test]
    fn reset_output_difference_is_cycle_zero() {
        let f = toggle();
        let mut g = f.clone();
        g.states[0].outputs.insert("y".into(), 1);
        let v = check_equivalence(&f, &g, None).unwrap();
        assert_eq!(v.mismatch_cycle, Some(0));
        assert_eq!(v.counterexample, Some(vec![]));
    }

    #[test]
    fn interface_mismatch() {
        let f = toggle();
        let mut g = f.clone();
        g.outputs[0].width = 2;
        assert_eq!(
            check_equivalence(&f, &g, None),
            Err(VerifyError::Interface(vec!["output y".into()]))
        );
    }

    #[test]
    fn input_order_is_irrelevant() {
        let f = machine(
            &["a", "b"],
            &[("q", 1)],
            &[("S", &[0], &[("a & !b", "T")]), ("T", &[1], &[("b", "S")])],
        );
        let mut g = f.clone();
        g.inputs.reverse();
        assert!(check_equivalence(&f, &g, None).unwrap().equivalent);
    }

    #[test]
    fn depth_bound_marks_incomplete() {
        // divergence only after three steps
        let chain = |last: u64| {
            machine(
                &["go"],
                &[("q", 1)],
                &[
                    ("S0", &[0], &[("go", "S1")]),
                    ("S1", &[0], &[("go", "S2")]),
                    ("S2", &[0], &[("go", "S3")]),
                    ("S3", &[last], &[]),
                ],
            )
        };
        let (v, stats) = check_equivalence_with_stats(&chain(0), &chain(1), Some(2)).unwrap();
        assert!(v.equivalent && !stats.complete);
        let (v, stats) = check_equivalence_with_stats(&chain(0), &chain(1), None).unwrap();
        assert!(!v.equivalent && stats.complete);
        assert_eq!(v.mismatch_cycle, Some(3));
    }

    #[test]
    fn verdict_json_shape() {
        let f = toggle();
        let mut g = f.clone();
        g.states[1].outputs.insert("y".into(), 0);
        let v = check_equivalence(&f, &g, None).unwrap();
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"equivalent":false,"counterexample":[{"en":1}],"mismatch_cycle":1,"mismatch_output":"y"}"#
        );
    }
}
