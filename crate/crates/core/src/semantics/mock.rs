//! Deterministic stand-in provider.
//!
//! Naming: the reset state is `INIT`, every other state `P<phase>_S<idx>`.
//! Inputs are shared selector bits `sel_0..` plus `go`; a state with `k > 1`
//! successors guards edge `j` on the minterm of `⌈log2 k⌉` selector bits
//! encoding `j` (bit `i` on `sel_i`), a single successor on `go`. The
//! minterms are pairwise disjoint, so every edge is reachable through its
//! own guard regardless of priority order.
//!
//! The spec template is rigid and parsed back exactly by
//! [`mock_fsm_from_spec`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{
    mentions, Assignment, InterfaceSignature, Provenance, ProviderError, SemanticsProvider,
    SpecDocument,
};
use crate::guard::{parse_guard, Guard};
use crate::model::{
    validate_fsm, AbstractGraph, OutputDecl, SemanticFsm, StateDef, StateMapping, Transition,
};
use crate::rng::{derive_seed, DetRng};

const ORDER_STREAM: u64 = 0x006f_7264_6572;

pub const RESET_NAME: &str = "INIT";
pub const GO_INPUT: &str = "go";
pub const PHASE_OUTPUT: &str = "phase_id";
pub const EXIT_OUTPUT: &str = "at_exit";

fn clog2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

fn selector(i: usize) -> String {
    format!("sel_{i}")
}

fn minterm(j: usize, bits: usize) -> Guard {
    Guard::all(
        (0..bits)
            .map(|i| {
                let v = Guard::var(selector(i));
                if j >> i & 1 == 1 {
                    v
                } else {
                    Guard::not(v)
                }
            })
            .collect(),
    )
}

pub fn mock_assign_semantics(g: &AbstractGraph, seed: u64) -> Assignment {
    let mut rng = DetRng::new(derive_seed(seed, ORDER_STREAM));

    let mut names = BTreeMap::new();
    let mut phase_value = BTreeMap::new();
    let mut exits = BTreeSet::new();
    for (p, phase) in g.phases.iter().enumerate() {
        exits.insert(phase.exit);
        for (i, &id) in phase.members.iter().enumerate() {
            names.insert(id, format!("P{p}_S{i}"));
            phase_value.insert(id, p as u64 + 1);
        }
    }
    names.insert(g.reset_state, RESET_NAME.to_string());
    phase_value.insert(g.reset_state, 0);

    let sel_bits = g.states.iter().map(|&s| clog2(g.out_degree(s))).max().unwrap_or(0);
    let mut inputs: Vec<String> = (0..sel_bits).map(selector).collect();
    inputs.push(GO_INPUT.to_string());
    let phase_width = clog2(g.phases.len() + 1).max(1) as u32;

    let states = g
        .states
        .iter()
        .map(|&s| {
            let mut succ: Vec<u32> = g.successors(s).collect();
            rng.shuffle(&mut succ);
            let k = succ.len();
            let bits = clog2(k);
            let transitions = succ
                .iter()
                .enumerate()
                .map(|(j, t)| Transition {
                    guard: if k == 1 { Guard::var(GO_INPUT) } else { minterm(j, bits) },
                    next: names[t].clone(),
                })
                .collect();
            let outputs = BTreeMap::from([
                (PHASE_OUTPUT.to_string(), phase_value.get(&s).copied().unwrap_or(0)),
                (EXIT_OUTPUT.to_string(), exits.contains(&s) as u64),
            ]);
            StateDef { name: names[&s].clone(), outputs, transitions }
        })
        .collect();

    let fsm = SemanticFsm {
        name: "fsm".into(),
        clock: "clk".into(),
        reset_signal: "rst".into(),
        reset_state: RESET_NAME.into(),
        inputs,
        outputs: vec![
            OutputDecl { name: PHASE_OUTPUT.into(), width: phase_width },
            OutputDecl { name: EXIT_OUTPUT.into(), width: 1 },
        ],
        states,
    };
    let story = format!(
        "A sequencer of {phases} phases over {n} states. Selector inputs choose among \
         the branches leaving a state and `{GO_INPUT}` advances states with a single \
         successor. `{PHASE_OUTPUT}` reports the active phase (0 in {RESET_NAME}) and \
         `{EXIT_OUTPUT}` marks the last state of each phase.",
        phases = g.phases.len(),
        n = g.states.len(),
    );
    Assignment { fsm, mapping: StateMapping { pairs: names }, story }
}

fn bits_phrase(w: u32) -> String {
    if w == 1 {
        "1 bit".into()
    } else {
        format!("{w} bits")
    }
}

const RESET_PREFIX: &str = "On reset, the machine enters state ";
const MOVES: &str = ", the machine moves to ";
const HOLDS: &str = "otherwise it holds.";
const ALWAYS_HOLDS: &str = "the machine always holds.";

pub fn mock_spec_from_fsm(f: &SemanticFsm) -> SpecDocument {
    let mut io = String::new();
    let _ = writeln!(io, "Module `{}`.\n", f.name);
    let _ = writeln!(io, "- `{}`: input, 1 bit. Clock; state updates on the rising edge.", f.clock);
    let _ = writeln!(io, "- `{}`: input, 1 bit. Synchronous active-high reset.", f.reset_signal);
    for i in &f.inputs {
        let _ = writeln!(io, "- `{i}`: input, 1 bit.");
    }
    for o in &f.outputs {
        let _ = writeln!(io, "- `{}`: output, {}.", o.name, bits_phrase(o.width));
    }

    let mut reqs = vec![format!("{RESET_PREFIX}{}.", f.reset_state)];
    for s in &f.states {
        let mut r = format!("In state {}, ", s.name);
        if f.outputs.is_empty() {
            r.push_str("the machine drives no outputs.");
        } else {
            let drives: Vec<String> =
                f.outputs.iter().map(|o| format!("{} = {}", o.name, s.outputs[&o.name])).collect();
            let _ = write!(r, "the machine drives {}.", drives.join(", "));
        }
        let _ = write!(r, " When in state {}, ", s.name);
        if s.transitions.is_empty() {
            r.push_str(ALWAYS_HOLDS);
        } else {
            for (k, t) in s.transitions.iter().enumerate() {
                let kw = if k == 0 { "if" } else { "else if" };
                let _ = write!(r, "{kw} {}{MOVES}{}; ", t.guard, t.next);
            }
            r.push_str(HOLDS);
        }
        reqs.push(r);
    }
    SpecDocument::new(io.trim_end(), reqs)
}

fn fail(msg: impl Into<String>) -> ProviderError {
    ProviderError::Reconstruction(msg.into())
}

fn parse_state_sentence(
    text: &str,
    iface: &InterfaceSignature,
) -> Result<StateDef, ProviderError> {
    let rest = text.strip_prefix("In state ").ok_or_else(|| fail(format!("unexpected requirement: {text}")))?;
    let (name, rest) = rest.split_once(", the machine drives ").ok_or_else(|| fail(format!("no output clause: {text}")))?;
    let marker = format!(". When in state {name}, ");
    let (drives, rest) = rest.split_once(&marker).ok_or_else(|| fail(format!("no transition clause for {name}")))?;

    let mut outputs = BTreeMap::new();
    if drives != "no outputs" {
        for item in drives.split(", ") {
            let (o, v) = item.split_once(" = ").ok_or_else(|| fail(format!("bad output assignment `{item}`")))?;
            let v: u64 = v.parse().map_err(|_| fail(format!("bad output value `{v}`")))?;
            if outputs.insert(o.to_string(), v).is_some() {
                return Err(fail(format!("output {o} assigned twice in {name}")));
            }
        }
    }
    let declared: BTreeSet<&str> = iface.outputs.iter().map(|o| o.name.as_str()).collect();
    let assigned: BTreeSet<&str> = outputs.keys().map(String::as_str).collect();
    if declared != assigned {
        return Err(fail(format!("state {name} does not drive exactly the declared outputs")));
    }

    let mut transitions = Vec::new();
    if rest != ALWAYS_HOLDS {
        let body = rest.strip_suffix(HOLDS).ok_or_else(|| fail(format!("state {name} lacks a hold clause")))?;
        for (k, clause) in body.split_terminator("; ").enumerate() {
            let kw = if k == 0 { "if " } else { "else if " };
            let clause = clause.strip_prefix(kw).ok_or_else(|| fail(format!("bad clause `{clause}`")))?;
            let (g, next) = clause.rsplit_once(MOVES).ok_or_else(|| fail(format!("bad clause `{clause}`")))?;
            let guard = parse_guard(g).map_err(|e| fail(format!("guard `{g}`: {e}")))?;
            transitions.push(Transition { guard, next: next.to_string() });
        }
        if transitions.is_empty() {
            return Err(fail(format!("state {name} has an empty transition list")));
        }
    }
    Ok(StateDef { name: name.to_string(), outputs, transitions })
}

/// Inverse of [`mock_spec_from_fsm`]; rejects anything the template could
/// not have produced for this mapping and interface.
pub fn mock_fsm_from_spec(
    spec: &SpecDocument,
    mapping: &StateMapping,
    iface: &InterfaceSignature,
) -> Result<SemanticFsm, ProviderError> {
    let missing = spec.missing_signals(iface);
    if !missing.is_empty() {
        return Err(fail(format!("signals missing from the I/O section: {}", missing.join(", "))));
    }
    if !mentions(&spec.io_section, &iface.name) {
        return Err(fail(format!("module {} not named in the I/O section", iface.name)));
    }
    let (first, rest) = spec.requirements.split_first().ok_or_else(|| fail("empty requirements section"))?;
    let reset = first
        .strip_prefix(RESET_PREFIX)
        .and_then(|r| r.strip_suffix('.'))
        .ok_or_else(|| fail("first requirement must state the reset behaviour"))?;

    let states = rest.iter().map(|r| parse_state_sentence(r, iface)).collect::<Result<Vec<_>, _>>()?;
    let got: BTreeSet<&str> = states.iter().map(|s| s.name.as_str()).collect();
    if got.len() != states.len() {
        return Err(fail("a state is described twice"));
    }
    if got != mapping.names() {
        return Err(fail("described states differ from the state mapping"));
    }

    let fsm = SemanticFsm {
        name: iface.name.clone(),
        clock: iface.clock.clone(),
        reset_signal: iface.reset_signal.clone(),
        reset_state: reset.to_string(),
        inputs: iface.inputs.clone(),
        outputs: iface.outputs.clone(),
        states,
    };
    let report = validate_fsm(&fsm);
    if !report.is_empty() {
        return Err(fail(report.to_string()));
    }
    Ok(fsm)
}

/// Hermetic provider built on the functions above.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockProvider;

impl SemanticsProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn assign_semantics(
        &self,
        g: &AbstractGraph,
        seed: u64,
        _log: &mut Provenance,
    ) -> Result<Assignment, ProviderError> {
        Ok(mock_assign_semantics(g, seed))
    }

    fn spec_from_fsm(&self, f: &SemanticFsm, _log: &mut Provenance) -> Result<SpecDocument, ProviderError> {
        Ok(mock_spec_from_fsm(f))
    }

    fn fsm_from_spec(
        &self,
        spec: &SpecDocument,
        mapping: &StateMapping,
        iface: &InterfaceSignature,
        _log: &mut Provenance,
    ) -> Result<SemanticFsm, ProviderError> {
        mock_fsm_from_spec(spec, mapping, iface)
    }
}
