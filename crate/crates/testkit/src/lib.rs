//! Oracles and generators shared by the integration and acceptance suites.
//!
//! Everything here is written against the data model only: guards are
//! evaluated by a separate recursive interpreter, machines are stepped by a
//! linear scan over state names, and equivalence is decided by exhaustive
//! sequence enumeration. None of it calls the library's simulator,
//! compiler, or product-machine search.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::RangeInclusive;

use fsmbench_core::guard::Guard;
use fsmbench_core::model::{OutputDecl, SemanticFsm, StateDef, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- guards

/// Truth value of `g` under `env`; panics on an unbound variable.
pub fn truth(g: &Guard, env: &HashMap<&str, bool>) -> bool {
    match g {
        Guard::Const(b) => *b,
        Guard::Var(v) => *env.get(v.as_str()).unwrap_or_else(|| panic!("unbound {v}")),
        Guard::Not(c) => !truth(c, env),
        Guard::And(cs) => cs.iter().all(|c| truth(c, env)),
        Guard::Or(cs) => cs.iter().any(|c| truth(c, env)),
    }
}

/// Environment for valuation `index` over `vars`, first name = MSB.
pub fn env(vars: &[String], index: u64) -> HashMap<&str, bool> {
    let n = vars.len();
    vars.iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), (index >> (n - 1 - i)) & 1 == 1))
        .collect()
}

/// Full truth table of `g` over `vars`.
pub fn truth_table(g: &Guard, vars: &[String]) -> Vec<bool> {
    (0..1u64 << vars.len()).map(|i| truth(g, &env(vars, i))).collect()
}

pub fn var_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("in{i}")).collect()
}

/// Random well-formed guard of depth at most `max_depth` over `vars`.
pub fn random_guard(r: &mut TestRng, vars: &[String], max_depth: usize) -> Guard {
    let leaf = |r: &mut TestRng| {
        if vars.is_empty() || r.random_bool(0.1) {
            Guard::Const(r.random_bool(0.5))
        } else {
            Guard::Var(vars[r.random_range(0..vars.len())].clone())
        }
    };
    if max_depth <= 1 || r.random_bool(0.25) {
        return leaf(r);
    }
    match r.random_range(0..3) {
        0 => Guard::Not(Box::new(random_guard(r, vars, max_depth - 1))),
        k => {
            let n = r.random_range(2..=3);
            let cs = (0..n).map(|_| random_guard(r, vars, max_depth - 1)).collect();
            if k == 1 {
                Guard::And(cs)
            } else {
                Guard::Or(cs)
            }
        }
    }
}

/// Index of the transition selected by a priority scan, if any.
pub fn priority_pick(s: &StateDef, vars: &[String], index: u64) -> Option<usize> {
    let e = env(vars, index);
    s.transitions.iter().position(|t| truth(&t.guard, &e))
}

// -------------------------------------------------------------- machines

/// Random machine: `n_states` states `S0..`, inputs `in0..`, outputs
/// `o0..` of width 1–3, up to three transitions per state.
pub fn random_fsm(r: &mut TestRng, n_states: usize, n_inputs: usize, n_outputs: usize) -> SemanticFsm {
    let inputs = var_names(n_inputs);
    let outputs: Vec<OutputDecl> = (0..n_outputs)
        .map(|i| OutputDecl { name: format!("o{i}"), width: r.random_range(1..=3) })
        .collect();
    let states = (0..n_states)
        .map(|i| {
            let outs = outputs
                .iter()
                .map(|o| (o.name.clone(), r.random_range(0..1u64 << o.width)))
                .collect();
            let transitions = (0..r.random_range(0..=3))
                .map(|_| Transition {
                    guard: random_guard(r, &inputs, 3),
                    next: format!("S{}", r.random_range(0..n_states)),
                })
                .collect();
            StateDef { name: format!("S{i}"), outputs: outs, transitions }
        })
        .collect();
    SemanticFsm {
        name: "rand_fsm".into(),
        clock: "clk".into(),
        reset_signal: "rst".into(),
        reset_state: "S0".into(),
        inputs,
        outputs,
        states,
    }
}

/// [`random_fsm`] with each dimension drawn from a range.
pub fn random_fsm_in(
    r: &mut TestRng,
    states: RangeInclusive<usize>,
    inputs: RangeInclusive<usize>,
    outputs: RangeInclusive<usize>,
) -> SemanticFsm {
    let (n, i, o) = (r.random_range(states), r.random_range(inputs), r.random_range(outputs));
    random_fsm(r, n, i, o)
}

/// Every state renamed `S<i>` → `R<i>_q`, declaration order reversed.
pub fn renamed(f: &SemanticFsm) -> SemanticFsm {
    let map: BTreeMap<String, String> =
        f.states.iter().map(|s| (s.name.clone(), format!("{}_q", s.name.replacen('S', "R", 1)))).collect();
    let mut g = f.renamed(&map);
    g.states.reverse();
    g
}

/// Flips one output bit in one state.
pub fn output_mutated(r: &mut TestRng, f: &SemanticFsm) -> SemanticFsm {
    let mut g = f.clone();
    if g.outputs.is_empty() {
        return g;
    }
    let s = r.random_range(0..g.states.len());
    let o = &g.outputs[r.random_range(0..g.outputs.len())];
    let bit = 1u64 << r.random_range(0..o.width);
    *g.states[s].outputs.get_mut(&o.name).expect("declared") ^= bit;
    g
}

/// Retargets, drops, or adds one transition.
pub fn transition_mutated(r: &mut TestRng, f: &SemanticFsm) -> SemanticFsm {
    let mut g = f.clone();
    let n = g.states.len();
    let s = r.random_range(0..n);
    let st = &mut g.states[s];
    match (st.transitions.len(), r.random_range(0..3)) {
        (0, _) | (_, 0) => {
            let guard = random_guard(r, &f.inputs, 2);
            let at = r.random_range(0..=st.transitions.len());
            st.transitions.insert(at, Transition { guard, next: format!("S{}", r.random_range(0..n)) });
        }
        (len, 1) => {
            st.transitions.remove(r.random_range(0..len));
        }
        (len, _) => {
            let t = &mut st.transitions[r.random_range(0..len)];
            t.next = format!("S{}", r.random_range(0..n));
        }
    }
    g
}

/// Oracle stepper: linear scan over state names and transitions.
pub struct Interp<'a> {
    f: &'a SemanticFsm,
}

impl<'a> Interp<'a> {
    pub fn new(f: &'a SemanticFsm) -> Self {
        Interp { f }
    }

    fn def(&self, name: &str) -> &'a StateDef {
        self.f.states.iter().find(|s| s.name == name).expect("declared state")
    }

    pub fn reset(&self) -> &'a str {
        &self.f.reset_state
    }

    pub fn next(&self, state: &str, valuation: u64) -> &'a str {
        let s = self.def(state);
        match priority_pick(s, &self.f.inputs, valuation) {
            Some(i) => &s.transitions[i].next,
            None => &s.name,
        }
    }

    /// Output values by name.
    pub fn outputs(&self, state: &str) -> &'a BTreeMap<String, u64> {
        &self.def(state).outputs
    }

    /// Output vectors for cycles `0..inputs.len()` from reset.
    pub fn trace(&self, inputs: &[u64]) -> Vec<BTreeMap<String, u64>> {
        let mut s = self.reset();
        let mut out = Vec::with_capacity(inputs.len());
        for &v in inputs {
            out.push(self.outputs(s).clone());
            s = self.next(s, v);
        }
        out
    }

    /// Explicit transitions `(state, index)` taken along `inputs`.
    pub fn taken(&self, inputs: &[u64]) -> BTreeSet<(String, usize)> {
        let mut s = self.reset();
        let mut seen = BTreeSet::new();
        for &v in inputs {
            let def = self.def(s);
            if let Some(i) = priority_pick(def, &self.f.inputs, v) {
                seen.insert((def.name.clone(), i));
            }
            s = self.next(s, v);
        }
        seen
    }
}

/// Earliest cycle at which the two machines can produce different outputs,
/// found by simulating every input sequence of length up to
/// `|S_a|·|S_b|`. Machines are deterministic, so sequences that reach the
/// same state pair at the same length are simulated once.
pub fn brute_force_divergence(a: &SemanticFsm, b: &SemanticFsm) -> Option<usize> {
    assert_eq!(a.inputs, b.inputs);
    let (ia, ib) = (Interp::new(a), Interp::new(b));
    let bound = a.states.len() * b.states.len();
    let mut frontier: BTreeSet<(&str, &str)> = BTreeSet::from([(ia.reset(), ib.reset())]);
    for cycle in 0..=bound {
        if frontier.iter().any(|&(x, y)| ia.outputs(x) != ib.outputs(y)) {
            return Some(cycle);
        }
        frontier = frontier
            .iter()
            .flat_map(|&(x, y)| (0..1u64 << a.inputs.len()).map(move |v| (x, y, v)))
            .map(|(x, y, v)| (ia.next(x, v), ib.next(y, v)))
            .collect();
    }
    None
}

/// Literal enumeration of all `4^len` sequences (for tiny machines): the
/// earliest divergence cycle, or `None` up to `len`.
pub fn enumerate_divergence(a: &SemanticFsm, b: &SemanticFsm, len: usize) -> Option<usize> {
    let base = 1u64 << a.inputs.len();
    let total = base.pow(len as u32);
    let (ia, ib) = (Interp::new(a), Interp::new(b));
    let mut best: Option<usize> = None;
    for code in 0..total {
        let mut c = code;
        let seq: Vec<u64> = (0..len).map(|_| { let v = c % base; c /= base; v }).collect();
        let (ta, tb) = (ia.trace(&seq), ib.trace(&seq));
        let (mut x, mut y) = (ia.reset(), ib.reset());
        for &v in &seq {
            x = ia.next(x, v);
            y = ib.next(y, v);
        }
        let first = ta
            .iter()
            .zip(&tb)
            .position(|(p, q)| p != q)
            .or_else(|| (ia.outputs(x) != ib.outputs(y)).then_some(len));
        if let Some(t) = first {
            best = Some(best.map_or(t, |b| b.min(t)));
        }
    }
    best
}

// ------------------------------------------------------------- pass@k

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// `1 - C(n-c, k) / C(n, k)` as an unreduced fraction.
pub fn pass_at_k_exact(n: u64, c: u64, k: u64) -> (u128, u128) {
    let den = binomial(n, k);
    (den - binomial(n - c, k), den)
}

/// Flips bit 0 of the first output in the state occupied at cycle `at`
/// of `inputs`. Returns the mutant, the first cycle whose outputs change,
/// and the output name.
pub fn mutate_visited_output(f: &SemanticFsm, inputs: &[u64], at: usize) -> (SemanticFsm, usize, String) {
    let it = Interp::new(f);
    let mut visits = Vec::with_capacity(inputs.len());
    let mut s = it.reset();
    for &v in inputs {
        visits.push(s);
        s = it.next(s, v);
    }
    let target = visits[at].to_string();
    let out = f.outputs[0].name.clone();
    let mut g = f.clone();
    let st = g.states.iter_mut().find(|s| s.name == target).expect("visited");
    *st.outputs.get_mut(&out).expect("declared") ^= 1;
    let first = visits.iter().position(|&v| v == target).expect("visited");
    (g, first, out)
}
