//! Cycle-accurate Moore-machine interpreter.
//!
//! Timing: reset leaves the machine in its reset state before row 0. Row
//! `t` pairs `inputs[t]` with the outputs of the current state `s_t`; the
//! inputs take effect at the boundary to cycle `t + 1`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::guard::{CompiledGuard, GuardError, InputValuation};
use crate::model::SemanticFsm;

/// Valuations are packed into a `u64` index.
pub const MAX_SIM_INPUTS: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("state `{0}` is not declared")]
    UnknownState(String),
    #[error("valuation {0} does not match the declared inputs")]
    Domain(String),
    #[error("{0} inputs exceed the simulator limit of {MAX_SIM_INPUTS}")]
    TooManyInputs(usize),
    #[error(transparent)]
    Guard(#[from] GuardError),
    #[error("CSV error: {0}")]
    Csv(String),
}

/// Index-resolved form of a [`SemanticFsm`] for fast stepping.
#[derive(Clone, Debug)]
pub struct CompiledFsm<'a> {
    pub fsm: &'a SemanticFsm,
    pub reset: usize,
    transitions: Vec<Vec<(CompiledGuard, usize)>>,
    outputs: Vec<Vec<u64>>,
}

impl<'a> CompiledFsm<'a> {
    pub fn new(fsm: &'a SemanticFsm) -> Result<Self, SimError> {
        if fsm.inputs.len() > MAX_SIM_INPUTS {
            return Err(SimError::TooManyInputs(fsm.inputs.len()));
        }
        let index = |name: &str| {
            fsm.state_index(name).ok_or_else(|| SimError::UnknownState(name.to_string()))
        };
        let reset = index(&fsm.reset_state)?;
        let mut transitions = Vec::with_capacity(fsm.states.len());
        let mut outputs = Vec::with_capacity(fsm.states.len());
        for s in &fsm.states {
            let ts = s
                .transitions
                .iter()
                .map(|t| Ok((t.guard.compile(&fsm.inputs)?, index(&t.next)?)))
                .collect::<Result<Vec<_>, SimError>>()?;
            transitions.push(ts);
            outputs.push(
                fsm.outputs
                    .iter()
                    .map(|o| s.outputs.get(&o.name).copied().unwrap_or(0))
                    .collect(),
            );
        }
        Ok(CompiledFsm { fsm, reset, transitions, outputs })
    }

    pub fn num_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.fsm.inputs.len()
    }

    /// Priority scan; `None` means no guard fired and the state holds.
    pub fn step(&self, state: usize, valuation: u64) -> (usize, Option<usize>) {
        self.transitions[state]
            .iter()
            .enumerate()
            .find(|(_, (g, _))| g.eval(valuation))
            .map_or((state, None), |(i, &(_, next))| (next, Some(i)))
    }

    /// Outputs of `state` in declared output order.
    pub fn outputs(&self, state: usize) -> &[u64] {
        &self.outputs[state]
    }

    /// Explicit edges of `state` as (edge index, target).
    pub fn edges(&self, state: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.transitions[state].iter().enumerate().map(|(i, &(_, t))| (i, t))
    }

    pub fn valuation_index(&self, v: &InputValuation) -> Result<u64, SimError> {
        v.index_for(&self.fsm.inputs).ok_or_else(|| SimError::Domain(v.to_string()))
    }

    /// States `s_0 ..= s_n` visited under `inputs` (one more than inputs).
    pub fn state_sequence(&self, inputs: &[u64]) -> Vec<usize> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut s = self.reset;
        states.push(s);
        for &v in inputs {
            s = self.step(s, v).0;
            states.push(s);
        }
        states
    }
}

/// Reference to an explicit transition: source state and priority index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeRef {
    pub state: String,
    pub index: usize,
}

impl EdgeRef {
    pub fn new(state: impl Into<String>, index: usize) -> Self {
        EdgeRef { state: state.into(), index }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub inputs: Vec<bool>,
    pub outputs: Vec<u64>,
}

/// Golden behavior: per-cycle inputs and expected outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn input_valuations(&self) -> Vec<InputValuation> {
        self.rows
            .iter()
            .map(|r| InputValuation::from_bits(&self.input_names, &r.inputs))
            .collect()
    }

    /// Whether the trace columns match the FSM's declared interface.
    pub fn matches_interface(&self, f: &SemanticFsm) -> bool {
        self.input_names == f.inputs
            && self.output_names.len() == f.outputs.len()
            && self.output_names.iter().zip(&f.outputs).all(|(n, o)| *n == o.name)
    }

    /// Header `cycle,<inputs...>,<outputs...>`, unsigned decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle");
        for n in self.input_names.iter().chain(&self.output_names) {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, row) in self.rows.iter().enumerate() {
            write!(out, "{t}").unwrap();
            for &b in &row.inputs {
                write!(out, ",{}", b as u8).unwrap();
            }
            for &v in &row.outputs {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses a golden trace whose header must be exactly
    /// `cycle,<inputs>,<outputs>` for the given interface.
    pub fn from_csv(text: &str, f: &SemanticFsm) -> Result<Trace, SimError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| SimError::Csv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut expected = vec!["cycle".to_string()];
        expected.extend(f.inputs.iter().cloned());
        expected.extend(f.outputs.iter().map(|o| o.name.clone()));
        if header != expected {
            return Err(SimError::Csv(format!(
                "header {header:?} does not match interface {expected:?}"
            )));
        }
        let ni = f.inputs.len();
        let mut rows = Vec::new();
        for (t, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| SimError::Csv(e.to_string()))?;
            let cycle: usize = parse_field(&rec[0], t)?;
            if cycle != t {
                return Err(SimError::Csv(format!("row {t} has cycle {cycle}")));
            }
            let inputs = (1..=ni).map(|i| parse_bit(&rec[i], t)).collect::<Result<_, _>>()?;
            let outputs = (ni + 1..rec.len())
                .map(|i| parse_field::<u64>(&rec[i], t))
                .collect::<Result<_, _>>()?;
            rows.push(TraceRow { inputs, outputs });
        }
        Ok(Trace {
            input_names: f.inputs.clone(),
            output_names: f.outputs.iter().map(|o| o.name.clone()).collect(),
            rows,
        })
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, row: usize) -> Result<T, SimError> {
    s.parse().map_err(|_| SimError::Csv(format!("row {row}: bad value `{s}`")))
}

fn parse_bit(s: &str, row: usize) -> Result<bool, SimError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(SimError::Csv(format!("row {row}: `{s}` is not a bit"))),
    }
}

/// Reads a stimulus file: a header naming every input (an optional
/// leading `cycle` column and any extra output columns are ignored), one
/// row of bits per cycle.
pub fn read_stimulus_csv(text: &str, inputs: &[String]) -> Result<Vec<InputValuation>, SimError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| SimError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let cols = inputs
        .iter()
        .map(|i| {
            header
                .iter()
                .position(|h| h == i)
                .ok_or_else(|| SimError::Csv(format!("missing input column `{i}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for (t, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SimError::Csv(e.to_string()))?;
        let bits = cols.iter().map(|&c| parse_bit(&rec[c], t)).collect::<Result<Vec<_>, _>>()?;
        out.push(InputValuation::from_bits(inputs, &bits));
    }
    Ok(out)
}

pub fn step(
    f: &SemanticFsm,
    state: &str,
    v: &InputValuation,
) -> Result<(String, Option<usize>), SimError> {
    let c = CompiledFsm::new(f)?;
    let s = f.state_index(state).ok_or_else(|| SimError::UnknownState(state.to_string()))?;
    let (next, taken) = c.step(s, c.valuation_index(v)?);
    Ok((f.states[next].name.clone(), taken))
}

pub fn run(f: &SemanticFsm, inputs: &[InputValuation]) -> Result<Trace, SimError> {
    let c = CompiledFsm::new(f)?;
    let idx = inputs.iter().map(|v| c.valuation_index(v)).collect::<Result<Vec<_>, _>>()?;
    let states = c.state_sequence(&idx);
    let rows = inputs
        .iter()
        .zip(&states)
        .map(|(v, &s)| TraceRow { inputs: v.bits(), outputs: c.outputs(s).to_vec() })
        .collect();
    Ok(Trace {
        input_names: f.inputs.clone(),
        output_names: f.outputs.iter().map(|o| o.name.clone()).collect(),
        rows,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Coverage {
    pub states: BTreeSet<String>,
    pub edges: BTreeSet<EdgeRef>,
}

pub fn coverage(f: &SemanticFsm, inputs: &[InputValuation]) -> Result<Coverage, SimError> {
    let c = CompiledFsm::new(f)?;
    let mut cov = Coverage::default();
    let mut s = c.reset;
    cov.states.insert(f.states[s].name.clone());
    for v in inputs {
        let (next, taken) = c.step(s, c.valuation_index(v)?);
        if let Some(i) = taken {
            cov.edges.insert(EdgeRef::new(f.states[s].name.clone(), i));
        }
        s = next;
        cov.states.insert(f.states[s].name.clone());
    }
    Ok(cov)
}
