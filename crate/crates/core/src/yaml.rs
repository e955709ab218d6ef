//! Semantic FSM YAML format.
//!
//! ```yaml
//! name: toggle
//! clock: clk
//! reset: {signal: rst, kind: synchronous, active: high, state: A}
//! inputs: [en]
//! outputs: {y: 1}
//! states:
//!   A:
//!     outputs: {y: 0}
//!     transitions:
//!       - {guard: "en", next: B}
//!   B:
//!     outputs: {y: 1}
//!     transitions: []
//! ```
//!
//! Unknown keys are rejected. `clock` defaults to `clk`; `reset.kind` and
//! `reset.active` accept only `synchronous` and `high`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde_yaml::{Mapping, Value};
use thiserror::Error;

use crate::guard::{parse_guard, Guard, GuardError};
use crate::model::{validate_fsm, OutputDecl, SemanticFsm, StateDef, Transition, ValidationReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemaCode {
    MissingField,
    UnknownKey,
    WrongType,
    UnsupportedValue,
}

impl fmt::Display for SchemaCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemaCode::MissingField => "MISSING_FIELD",
            SchemaCode::UnknownKey => "UNKNOWN_KEY",
            SchemaCode::WrongType => "WRONG_TYPE",
            SchemaCode::UnsupportedValue => "UNSUPPORTED_VALUE",
        })
    }
}

#[derive(Debug, Error)]
pub enum YamlError {
    #[error("YAML syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{code} {path}")]
    Schema { code: SchemaCode, path: String },
    #[error("bad guard at {path}: {source}")]
    Guard {
        path: String,
        #[source]
        source: GuardError,
    },
    #[error("invalid FSM: {0}")]
    Invalid(ValidationReport),
}

impl YamlError {
    pub fn schema_code(&self) -> Option<SchemaCode> {
        match self {
            YamlError::Schema { code, .. } => Some(*code),
            _ => None,
        }
    }
}

fn schema(code: SchemaCode, path: impl Into<String>) -> YamlError {
    YamlError::Schema { code, path: path.into() }
}

struct Fields<'a> {
    map: &'a Mapping,
    path: &'a str,
}

impl<'a> Fields<'a> {
    fn new(value: &'a Value, path: &'a str, allowed: &[&str]) -> Result<Self, YamlError> {
        let map = value.as_mapping().ok_or_else(|| schema(SchemaCode::WrongType, path_or_root(path)))?;
        for key in map.keys() {
            let k = key.as_str().ok_or_else(|| schema(SchemaCode::WrongType, join(path, "<key>")))?;
            if !allowed.contains(&k) {
                return Err(schema(SchemaCode::UnknownKey, join(path, k)));
            }
        }
        Ok(Fields { map, path })
    }

    fn opt(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key)
    }

    fn req(&self, key: &str) -> Result<&'a Value, YamlError> {
        self.opt(key).ok_or_else(|| schema(SchemaCode::MissingField, join(self.path, key)))
    }

    fn req_str(&self, key: &str) -> Result<String, YamlError> {
        as_name(self.req(key)?, &join(self.path, key))
    }
}

fn path_or_root(path: &str) -> String {
    if path.is_empty() { "<root>".into() } else { path.into() }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() { key.to_string() } else { format!("{path}.{key}") }
}

fn as_name(v: &Value, path: &str) -> Result<String, YamlError> {
    v.as_str().map(str::to_string).ok_or_else(|| schema(SchemaCode::WrongType, path))
}

fn as_uint(v: &Value, path: &str) -> Result<u64, YamlError> {
    v.as_u64().ok_or_else(|| schema(SchemaCode::WrongType, path))
}

fn guard_text(v: &Value, path: &str) -> Result<String, YamlError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) if n.as_u64() == Some(0) || n.as_u64() == Some(1) => Ok(n.to_string()),
        Value::Bool(b) => Ok(if *b { "1" } else { "0" }.to_string()),
        _ => Err(schema(SchemaCode::WrongType, path)),
    }
}

pub fn parse_fsm_yaml(text: &str) -> Result<SemanticFsm, YamlError> {
    let root: Value = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
        YamlError::Syntax { line, column, message: e.to_string() }
    })?;
    let top = Fields::new(&root, "", &["name", "clock", "reset", "inputs", "outputs", "states"])?;

    let name = top.req_str("name")?;
    let clock = match top.opt("clock") {
        Some(v) => as_name(v, "clock")?,
        None => "clk".to_string(),
    };

    let reset = Fields::new(top.req("reset")?, "reset", &["signal", "kind", "active", "state"])?;
    let reset_signal = reset.req_str("signal")?;
    let reset_state = reset.req_str("state")?;
    for (key, only) in [("kind", "synchronous"), ("active", "high")] {
        if let Some(v) = reset.opt(key) {
            let path = join("reset", key);
            if as_name(v, &path)? != only {
                return Err(schema(SchemaCode::UnsupportedValue, path));
            }
        }
    }

    let inputs = top
        .req("inputs")?
        .as_sequence()
        .ok_or_else(|| schema(SchemaCode::WrongType, "inputs"))?
        .iter()
        .enumerate()
        .map(|(i, v)| as_name(v, &format!("inputs[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;

    let outputs = top
        .req("outputs")?
        .as_mapping()
        .ok_or_else(|| schema(SchemaCode::WrongType, "outputs"))?
        .iter()
        .map(|(k, v)| {
            let name = as_name(k, "outputs.<key>")?;
            let path = join("outputs", &name);
            let width = as_uint(v, &path)?;
            let width = u32::try_from(width).map_err(|_| schema(SchemaCode::WrongType, path))?;
            Ok(OutputDecl { name, width })
        })
        .collect::<Result<Vec<_>, YamlError>>()?;

    let mut states = Vec::new();
    for (k, v) in top
        .req("states")?
        .as_mapping()
        .ok_or_else(|| schema(SchemaCode::WrongType, "states"))?
    {
        let state_name = as_name(k, "states.<key>")?;
        let spath = join("states", &state_name);
        let body = Fields::new(v, &spath, &["outputs", "transitions"])?;

        let mut outs = BTreeMap::new();
        let opath = join(&spath, "outputs");
        let omap = body.req("outputs")?.as_mapping().ok_or_else(|| schema(SchemaCode::WrongType, &opath))?;
        for (ok, ov) in omap {
            let oname = as_name(ok, &join(&opath, "<key>"))?;
            let value = as_uint(ov, &join(&opath, &oname))?;
            outs.insert(oname, value);
        }

        let mut transitions = Vec::new();
        if let Some(ts) = body.opt("transitions") {
            let tpath = join(&spath, "transitions");
            let seq = ts.as_sequence().ok_or_else(|| schema(SchemaCode::WrongType, &tpath))?;
            for (i, t) in seq.iter().enumerate() {
                let ipath = format!("{tpath}[{i}]");
                let tf = Fields::new(t, &ipath, &["guard", "next"])?;
                let gpath = join(&ipath, "guard");
                let text = guard_text(tf.req("guard")?, &gpath)?;
                let guard = parse_guard(&text).map_err(|source| YamlError::Guard { path: gpath, source })?;
                transitions.push(Transition { guard, next: tf.req_str("next")? });
            }
        }
        states.push(StateDef { name: state_name, outputs: outs, transitions });
    }

    let fsm = SemanticFsm { name, clock, reset_signal, reset_state, inputs, outputs, states };
    let report = validate_fsm(&fsm);
    if !report.is_empty() {
        return Err(YamlError::Invalid(report));
    }
    Ok(fsm)
}

/// Words some YAML loaders resolve to booleans or null.
const AMBIGUOUS: &[&str] = &["null", "true", "false", "yes", "no", "on", "off"];

fn scalar(name: &str) -> String {
    if AMBIGUOUS.contains(&name.to_ascii_lowercase().as_str()) {
        format!("\"{name}\"")
    } else {
        name.to_string()
    }
}

fn guard_scalar(g: &Guard) -> String {
    format!("\"{g}\"")
}

pub fn serialize_fsm_yaml(f: &SemanticFsm) -> Result<String, YamlError> {
    let report = validate_fsm(f);
    if !report.is_empty() {
        return Err(YamlError::Invalid(report));
    }
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "name: {}", scalar(&f.name)).unwrap();
    writeln!(w, "clock: {}", scalar(&f.clock)).unwrap();
    writeln!(
        w,
        "reset: {{signal: {}, kind: synchronous, active: high, state: {}}}",
        scalar(&f.reset_signal),
        scalar(&f.reset_state)
    )
    .unwrap();
    let inputs: Vec<String> = f.inputs.iter().map(|i| scalar(i)).collect();
    writeln!(w, "inputs: [{}]", inputs.join(", ")).unwrap();
    let outputs: Vec<String> =
        f.outputs.iter().map(|o| format!("{}: {}", scalar(&o.name), o.width)).collect();
    writeln!(w, "outputs: {{{}}}", outputs.join(", ")).unwrap();
    writeln!(w, "states:").unwrap();
    for s in &f.states {
        writeln!(w, "  {}:", scalar(&s.name)).unwrap();
        let outs: Vec<String> = f
            .outputs
            .iter()
            .map(|o| format!("{}: {}", scalar(&o.name), s.outputs[&o.name]))
            .collect();
        writeln!(w, "    outputs: {{{}}}", outs.join(", ")).unwrap();
        if s.transitions.is_empty() {
            writeln!(w, "    transitions: []").unwrap();
        } else {
            writeln!(w, "    transitions:").unwrap();
            for t in &s.transitions {
                writeln!(w, "      - {{guard: {}, next: {}}}", guard_scalar(&t.guard), scalar(&t.next))
                    .unwrap();
            }
        }
    }
    Ok(out)
}
