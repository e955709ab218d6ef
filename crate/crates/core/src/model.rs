//! Shared domain types: abstract topology, semantic Moore machines, state
//! mappings, difficulty tiers, and structural validation.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guard::Guard;

/// Numeric id of a state in an [`AbstractGraph`].
pub type StateId = u32;

/// Single-entry, single-exit group of states.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub entry: StateId,
    pub exit: StateId,
    /// Entry first, exit last.
    pub members: Vec<StateId>,
}

/// Anonymous directed graph of numbered states grouped into phases.
///
/// Field order matches the JSON interchange layout
/// `{states, reset, phases, edges}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractGraph {
    pub states: Vec<StateId>,
    #[serde(rename = "reset")]
    pub reset_state: StateId,
    pub phases: Vec<Phase>,
    pub edges: BTreeSet<(StateId, StateId)>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references an undeclared state")]
    DanglingEdge(StateId, StateId),
    #[error("state {0} belongs to more than one phase (or is the reset state)")]
    OverlappingPhase(StateId),
    #[error("phase with entry {entry} is malformed: {reason}")]
    MalformedPhase { entry: StateId, reason: String },
    #[error("state {0} is unreachable from reset")]
    Unreachable(StateId),
    #[error("reset state {0} is not declared")]
    MissingReset(StateId),
}

impl AbstractGraph {
    pub fn out_degree(&self, state: StateId) -> usize {
        self.edges.range((state, 0)..=(state, StateId::MAX)).count()
    }

    pub fn successors(&self, state: StateId) -> impl Iterator<Item = StateId> + '_ {
        self.edges
            .range((state, 0)..=(state, StateId::MAX))
            .map(|&(_, v)| v)
    }

    pub fn max_out_degree(&self) -> usize {
        self.states
            .iter()
            .map(|&s| self.out_degree(s))
            .max()
            .unwrap_or(0)
    }

    /// Index of the phase owning `state`, if any.
    pub fn phase_of(&self, state: StateId) -> Option<usize> {
        self.phases.iter().position(|p| p.members.contains(&state))
    }

    /// States reachable from the reset state (including it).
    pub fn reachable(&self) -> BTreeSet<StateId> {
        let mut seen = BTreeSet::from([self.reset_state]);
        let mut queue = VecDeque::from([self.reset_state]);
        while let Some(u) = queue.pop_front() {
            for v in self.successors(u) {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Checks every structural invariant; returns the first violation.
    pub fn check(&self) -> Result<(), GraphError> {
        let declared: HashSet<StateId> = self.states.iter().copied().collect();
        if !declared.contains(&self.reset_state) {
            return Err(GraphError::MissingReset(self.reset_state));
        }
        for &(u, v) in &self.edges {
            if !declared.contains(&u) || !declared.contains(&v) {
                return Err(GraphError::DanglingEdge(u, v));
            }
        }
        let mut owned = HashSet::from([self.reset_state]);
        for phase in &self.phases {
            let malformed = |reason: &str| GraphError::MalformedPhase {
                entry: phase.entry,
                reason: reason.to_string(),
            };
            if phase.members.first() != Some(&phase.entry)
                || phase.members.last() != Some(&phase.exit)
            {
                return Err(malformed("entry/exit must be first/last member"));
            }
            if phase.members.len() > 1 && phase.entry == phase.exit {
                return Err(malformed("entry equals exit in a multi-state phase"));
            }
            for &m in &phase.members {
                if !declared.contains(&m) {
                    return Err(malformed("member is not a declared state"));
                }
                if !owned.insert(m) {
                    return Err(GraphError::OverlappingPhase(m));
                }
            }
            let members: HashSet<StateId> = phase.members.iter().copied().collect();
            let internal: Vec<(StateId, StateId)> = self
                .edges
                .iter()
                .copied()
                .filter(|(u, v)| members.contains(u) && members.contains(v))
                .collect();
            let fwd = closure(phase.entry, &internal, false);
            let bwd = closure(phase.exit, &internal, true);
            if phase.members.iter().any(|m| !fwd.contains(m) || !bwd.contains(m)) {
                return Err(malformed("member not on an entry-to-exit path"));
            }
        }
        let reach = self.reachable();
        if let Some(&s) = self.states.iter().find(|s| !reach.contains(s)) {
            return Err(GraphError::Unreachable(s));
        }
        Ok(())
    }
}

fn closure(start: StateId, edges: &[(StateId, StateId)], reverse: bool) -> HashSet<StateId> {
    let mut seen = HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &(a, b) in edges {
            let (from, to) = if reverse { (b, a) } else { (a, b) };
            if from == u && seen.insert(to) {
                stack.push(to);
            }
        }
    }
    seen
}

/// Topology parameters for the phase-based graph sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopoConfig {
    pub num_phases: usize,
    /// Inclusive bounds on phase member count.
    pub states_per_phase: (usize, usize),
    pub p_forward_branch: f64,
    pub p_back_edge: f64,
    pub p_self_loop: f64,
    pub max_out_degree: usize,
    pub num_inter_phase_jumps: usize,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("probability {name} = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("states_per_phase range {0}..={1} is empty or starts at zero")]
    EmptyRange(usize, usize),
    #[error("max_out_degree must be at least 1")]
    ZeroDegree,
    #[error("num_phases must be at least 1")]
    NoPhases,
}

impl TopoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("p_forward_branch", self.p_forward_branch),
            ("p_back_edge", self.p_back_edge),
            ("p_self_loop", self.p_self_loop),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::Probability { name, value });
            }
        }
        let (lo, hi) = self.states_per_phase;
        if lo == 0 || lo > hi {
            return Err(ConfigError::EmptyRange(lo, hi));
        }
        if self.max_out_degree == 0 {
            return Err(ConfigError::ZeroDegree);
        }
        if self.num_phases == 0 {
            return Err(ConfigError::NoPhases);
        }
        Ok(())
    }
}

/// Difficulty bucket by total state count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Low,
    Medium,
    High,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("state count {0} is outside the tiered range [4, 59]")]
pub struct TierRangeError(pub usize);

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Low, Tier::Medium, Tier::High];

    /// Inclusive lower and upper state-count bounds. Low and Medium exclude
    /// their printed upper bound, which belongs to the next tier.
    pub fn bounds(self) -> (usize, usize) {
        match self {
            Tier::Low => (4, 13),
            Tier::Medium => (14, 26),
            Tier::High => (27, 59),
        }
    }

    pub fn contains(self, n_states: usize) -> bool {
        let (lo, hi) = self.bounds();
        (lo..=hi).contains(&n_states)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Low => "low",
            Tier::Medium => "medium",
            Tier::High => "high",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Tier::Low),
            "medium" => Ok(Tier::Medium),
            "high" => Ok(Tier::High),
            other => Err(format!("unknown tier `{other}` (expected low, medium or high)")),
        }
    }
}

pub fn tier_of(n_states: usize) -> Result<Tier, TierRangeError> {
    Tier::ALL
        .into_iter()
        .find(|t| t.contains(n_states))
        .ok_or(TierRangeError(n_states))
}

/// One guarded, prioritized transition.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transition {
    pub guard: Guard,
    pub next: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateDef {
    pub name: String,
    pub outputs: BTreeMap<String, u64>,
    /// Highest priority first.
    pub transitions: Vec<Transition>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDecl {
    pub name: String,
    pub width: u32,
}

/// Named Moore machine with a synchronous active-high reset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticFsm {
    pub name: String,
    pub clock: String,
    pub reset_signal: String,
    pub reset_state: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputDecl>,
    pub states: Vec<StateDef>,
}

impl SemanticFsm {
    pub fn state(&self, name: &str) -> Option<&StateDef> {
        self.states.iter().find(|s| s.name == name)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s.name == name)
    }

    pub fn output_width(&self, name: &str) -> Option<u32> {
        self.outputs.iter().find(|o| o.name == name).map(|o| o.width)
    }

    pub fn explicit_edge_count(&self) -> usize {
        self.states.iter().map(|s| s.transitions.len()).sum()
    }

    /// Distinct (source, target) pairs over explicit transitions.
    pub fn edge_pairs(&self) -> BTreeSet<(String, String)> {
        self.states
            .iter()
            .flat_map(|s| s.transitions.iter().map(|t| (s.name.clone(), t.next.clone())))
            .collect()
    }

    /// True when both machines declare the same inputs and output widths.
    pub fn same_interface(&self, other: &SemanticFsm) -> bool {
        self.interface_diff(other).is_empty()
    }

    /// Signals that differ between the two interfaces, in a stable order.
    /// Declaration order is not significant.
    pub fn interface_diff(&self, other: &SemanticFsm) -> Vec<String> {
        let mut diff = Vec::new();
        let a: BTreeSet<&String> = self.inputs.iter().collect();
        let b: BTreeSet<&String> = other.inputs.iter().collect();
        diff.extend(a.symmetric_difference(&b).map(|s| format!("input {s}")));
        let a: BTreeMap<&str, u32> =
            self.outputs.iter().map(|o| (o.name.as_str(), o.width)).collect();
        let b: BTreeMap<&str, u32> =
            other.outputs.iter().map(|o| (o.name.as_str(), o.width)).collect();
        let names: BTreeSet<&str> = a.keys().chain(b.keys()).copied().collect();
        for n in names {
            if a.get(n) != b.get(n) {
                diff.push(format!("output {n}"));
            }
        }
        diff
    }

    /// Same machine with states renamed through `rename`; names not in the
    /// map are kept.
    pub fn renamed(&self, rename: &BTreeMap<String, String>) -> SemanticFsm {
        let map = |n: &String| rename.get(n).cloned().unwrap_or_else(|| n.clone());
        SemanticFsm {
            reset_state: map(&self.reset_state),
            states: self
                .states
                .iter()
                .map(|s| StateDef {
                    name: map(&s.name),
                    outputs: s.outputs.clone(),
                    transitions: s
                        .transitions
                        .iter()
                        .map(|t| Transition { guard: t.guard.clone(), next: map(&t.next) })
                        .collect(),
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Bijection from abstract state ids to semantic state names.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateMapping {
    pub pairs: BTreeMap<StateId, String>,
}

impl StateMapping {
    pub fn get(&self, id: StateId) -> Option<&str> {
        self.pairs.get(&id).map(String::as_str)
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.pairs.values().map(String::as_str).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    NoStates,
    InvalidIdentifier,
    DuplicateName,
    NameConflict,
    InvalidWidth,
    UndeclaredState,
    UndeclaredInput,
    MissingOutput,
    UndeclaredOutput,
    OutputOutOfRange,
    MalformedGuard,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Offending name, qualified by its owning state where relevant.
    pub subject: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let code = serde_json::to_value(self.code).ok();
        let code = code.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        write!(f, "{code}: {}", self.subject)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, subject: impl Into<String>) {
        self.violations.push(Violation { code, subject: subject.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// `[a-zA-Z_][a-zA-Z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub const MAX_OUTPUT_WIDTH: u32 = 64;

pub fn validate_fsm(f: &SemanticFsm) -> ValidationReport {
    use ViolationCode::*;
    let mut report = ValidationReport::default();

    for (what, name) in [
        ("module", &f.name),
        ("clock", &f.clock),
        ("reset", &f.reset_signal),
    ] {
        if !is_identifier(name) {
            report.push(InvalidIdentifier, format!("{what} {name}"));
        }
    }
    if f.clock == f.reset_signal {
        report.push(NameConflict, f.clock.clone());
    }

    let mut seen_inputs = HashSet::new();
    for i in &f.inputs {
        if !is_identifier(i) {
            report.push(InvalidIdentifier, i.clone());
        }
        if !seen_inputs.insert(i.as_str()) {
            report.push(DuplicateName, i.clone());
        }
        if *i == f.clock || *i == f.reset_signal {
            report.push(NameConflict, i.clone());
        }
    }
    let mut seen_outputs = HashSet::new();
    for o in &f.outputs {
        if !is_identifier(&o.name) {
            report.push(InvalidIdentifier, o.name.clone());
        }
        if !seen_outputs.insert(o.name.as_str()) {
            report.push(DuplicateName, o.name.clone());
        }
        if seen_inputs.contains(o.name.as_str()) || o.name == f.clock || o.name == f.reset_signal
        {
            report.push(NameConflict, o.name.clone());
        }
        if o.width == 0 || o.width > MAX_OUTPUT_WIDTH {
            report.push(InvalidWidth, o.name.clone());
        }
    }

    if f.states.is_empty() {
        report.push(NoStates, f.name.clone());
    }
    let mut state_names = HashSet::new();
    for s in &f.states {
        if !is_identifier(&s.name) {
            report.push(InvalidIdentifier, s.name.clone());
        }
        if !state_names.insert(s.name.as_str()) {
            report.push(DuplicateName, s.name.clone());
        }
    }
    if !state_names.contains(f.reset_state.as_str()) {
        report.push(UndeclaredState, f.reset_state.clone());
    }

    for s in &f.states {
        for o in &f.outputs {
            match s.outputs.get(&o.name) {
                None => report.push(MissingOutput, format!("{}.{}", s.name, o.name)),
                Some(&v) if o.width < 64 && v >> o.width != 0 => {
                    report.push(OutputOutOfRange, format!("{}.{}", s.name, o.name))
                }
                Some(_) => {}
            }
        }
        for name in s.outputs.keys() {
            if !seen_outputs.contains(name.as_str()) {
                report.push(UndeclaredOutput, format!("{}.{}", s.name, name));
            }
        }
        for t in &s.transitions {
            if !state_names.contains(t.next.as_str()) {
                report.push(UndeclaredState, t.next.clone());
            }
            if !t.guard.is_well_formed() {
                report.push(MalformedGuard, format!("{} -> {}", s.name, t.next));
            }
            for var in t.guard.variables() {
                if !seen_inputs.contains(var) {
                    report.push(UndeclaredInput, format!("{}: {}", s.name, var));
                }
            }
        }
    }
    report
}
