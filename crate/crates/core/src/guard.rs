//! Boolean guard expressions over single-bit inputs.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term ('|' term)*
//! term   := factor ('&' factor)*
//! factor := '!' factor | '(' expr ')' | identifier | '0' | '1'
//! ```

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::model::{is_identifier, StateDef};

/// Enumeration bound for witness search and equivalence checking.
pub const MAX_ENUM_INPUTS: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Guard {
    Const(bool),
    Var(String),
    Not(Box<Guard>),
    /// At least two children.
    And(Vec<Guard>),
    /// At least two children.
    Or(Vec<Guard>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GuardError {
    #[error("syntax error at byte {offset}: expected one of {expected:?}, found {found}")]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("{0} inputs exceed the enumeration bound of {MAX_ENUM_INPUTS}")]
    Capacity(usize),
    #[error("transition index {index} out of range ({len} transitions)")]
    IndexOutOfRange { index: usize, len: usize },
}

impl Guard {
    pub fn var(name: impl Into<String>) -> Guard {
        Guard::Var(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(g: Guard) -> Guard {
        Guard::Not(Box::new(g))
    }

    /// Conjunction; collapses to the single child or `1` for short lists.
    pub fn all(mut children: Vec<Guard>) -> Guard {
        match children.len() {
            0 => Guard::Const(true),
            1 => children.pop().unwrap(),
            _ => Guard::And(children),
        }
    }

    pub fn any(mut children: Vec<Guard>) -> Guard {
        match children.len() {
            0 => Guard::Const(false),
            1 => children.pop().unwrap(),
            _ => Guard::Or(children),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self {
            Guard::Const(_) => true,
            Guard::Var(v) => is_identifier(v),
            Guard::Not(c) => c.is_well_formed(),
            Guard::And(cs) | Guard::Or(cs) => cs.len() >= 2 && cs.iter().all(Guard::is_well_formed),
        }
    }

    /// Distinct variable names, sorted.
    pub fn variables(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Guard::Const(_) => {}
            Guard::Var(v) => {
                out.insert(v);
            }
            Guard::Not(c) => c.collect_vars(out),
            Guard::And(cs) | Guard::Or(cs) => cs.iter().for_each(|c| c.collect_vars(out)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Guard::Const(_) | Guard::Var(_) => 1,
            Guard::Not(c) => 1 + c.depth(),
            Guard::And(cs) | Guard::Or(cs) => 1 + cs.iter().map(Guard::depth).max().unwrap_or(0),
        }
    }

    /// Evaluates against an arbitrary name lookup.
    pub fn eval_with<F>(&self, lookup: &F) -> Result<bool, GuardError>
    where
        F: Fn(&str) -> Option<bool>,
    {
        Ok(match self {
            Guard::Const(b) => *b,
            Guard::Var(v) => lookup(v).ok_or_else(|| GuardError::UnknownVariable(v.clone()))?,
            Guard::Not(c) => !c.eval_with(lookup)?,
            Guard::And(cs) => {
                let mut acc = true;
                for c in cs {
                    acc &= c.eval_with(lookup)?;
                }
                acc
            }
            Guard::Or(cs) => {
                let mut acc = false;
                for c in cs {
                    acc |= c.eval_with(lookup)?;
                }
                acc
            }
        })
    }

    pub fn eval(&self, v: &InputValuation) -> Result<bool, GuardError> {
        self.eval_with(&|name: &str| v.get(name))
    }

    /// Resolves variable names to positions in `inputs`.
    pub fn compile(&self, inputs: &[String]) -> Result<CompiledGuard, GuardError> {
        let n = inputs.len();
        Ok(match self {
            Guard::Const(b) => CompiledGuard::Const(*b),
            Guard::Var(v) => {
                let i = inputs
                    .iter()
                    .position(|x| x == v)
                    .ok_or_else(|| GuardError::UnknownVariable(v.clone()))?;
                CompiledGuard::Bit((n - 1 - i) as u32)
            }
            Guard::Not(c) => CompiledGuard::Not(Box::new(c.compile(inputs)?)),
            Guard::And(cs) => {
                CompiledGuard::And(cs.iter().map(|c| c.compile(inputs)).collect::<Result<_, _>>()?)
            }
            Guard::Or(cs) => {
                CompiledGuard::Or(cs.iter().map(|c| c.compile(inputs)).collect::<Result<_, _>>()?)
            }
        })
    }
}

/// A guard with variables resolved to bit positions of a valuation index.
///
/// Valuation index `v` over inputs `[x0, .., x(n-1)]` holds `x0` in its most
/// significant bit, so counting upward enumerates valuations in
/// lexicographic input order.
#[derive(Clone, Debug)]
pub enum CompiledGuard {
    Const(bool),
    Bit(u32),
    Not(Box<CompiledGuard>),
    And(Vec<CompiledGuard>),
    Or(Vec<CompiledGuard>),
}

impl CompiledGuard {
    pub fn eval(&self, v: u64) -> bool {
        match self {
            CompiledGuard::Const(b) => *b,
            CompiledGuard::Bit(s) => (v >> s) & 1 == 1,
            CompiledGuard::Not(c) => !c.eval(v),
            CompiledGuard::And(cs) => cs.iter().all(|c| c.eval(v)),
            CompiledGuard::Or(cs) => cs.iter().any(|c| c.eval(v)),
        }
    }
}

/// Total assignment of bits to the declared inputs, in declaration order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InputValuation {
    entries: Vec<(String, bool)>,
}

impl InputValuation {
    pub fn new(entries: Vec<(String, bool)>) -> Self {
        InputValuation { entries }
    }

    /// Decodes a valuation index (first input most significant).
    pub fn from_index(inputs: &[String], index: u64) -> Self {
        let n = inputs.len();
        InputValuation {
            entries: inputs
                .iter()
                .enumerate()
                .map(|(i, name)| (name.clone(), (index >> (n - 1 - i)) & 1 == 1))
                .collect(),
        }
    }

    pub fn from_bits(inputs: &[String], bits: &[bool]) -> Self {
        InputValuation {
            entries: inputs.iter().cloned().zip(bits.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        self.entries.iter().find(|(n, _)| n == name).map(|&(_, b)| b)
    }

    pub fn entries(&self) -> &[(String, bool)] {
        &self.entries
    }

    pub fn bits(&self) -> Vec<bool> {
        self.entries.iter().map(|&(_, b)| b).collect()
    }

    /// Index of this valuation relative to `inputs`; `None` if the domain
    /// does not match exactly.
    pub fn index_for(&self, inputs: &[String]) -> Option<u64> {
        if self.entries.len() != inputs.len() {
            return None;
        }
        let mut idx = 0u64;
        for name in inputs {
            idx = (idx << 1) | self.get(name)? as u64;
        }
        Some(idx)
    }
}

impl fmt::Display for InputValuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (n, b)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}:{}", *b as u8)?;
        }
        f.write_str("}")
    }
}

/// Lowest valuation (lexicographic over `inputs`) under which the
/// priority scan of `state` selects transition `edge_index`.
pub fn solve_priority(
    state: &StateDef,
    edge_index: usize,
    inputs: &[String],
) -> Result<Option<InputValuation>, GuardError> {
    if inputs.len() > MAX_ENUM_INPUTS {
        return Err(GuardError::Capacity(inputs.len()));
    }
    if edge_index >= state.transitions.len() {
        return Err(GuardError::IndexOutOfRange {
            index: edge_index,
            len: state.transitions.len(),
        });
    }
    let guards = state.transitions[..=edge_index]
        .iter()
        .map(|t| t.guard.compile(inputs))
        .collect::<Result<Vec<_>, _>>()?;
    let (target, earlier) = guards.split_last().expect("non-empty");
    let found = (0..1u64 << inputs.len())
        .find(|&v| target.eval(v) && earlier.iter().all(|g| !g.eval(v)));
    Ok(found.map(|v| InputValuation::from_index(inputs, v)))
}

pub fn parse_guard(text: &str) -> Result<Guard, GuardError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let g = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error(&["'&'", "'|'", "end of input"]));
    }
    Ok(g)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn error(&mut self, expected: &[&'static str]) -> GuardError {
        self.skip_ws();
        let found = match self.src.get(self.pos) {
            None => "end of input".to_string(),
            Some(&c) => format!("'{}'", c as char),
        };
        GuardError::Syntax { offset: self.pos, expected: expected.to_vec(), found }
    }

    fn expr(&mut self) -> Result<Guard, GuardError> {
        let mut terms = vec![self.term()?];
        while self.peek() == Some(b'|') {
            self.pos += 1;
            terms.push(self.term()?);
        }
        Ok(Guard::any(terms))
    }

    fn term(&mut self) -> Result<Guard, GuardError> {
        let mut factors = vec![self.factor()?];
        while self.peek() == Some(b'&') {
            self.pos += 1;
            factors.push(self.factor()?);
        }
        Ok(Guard::all(factors))
    }

    fn factor(&mut self) -> Result<Guard, GuardError> {
        const EXPECTED: &[&str] = &["'!'", "'('", "identifier", "'0'", "'1'"];
        match self.peek() {
            Some(b'!') => {
                self.pos += 1;
                Ok(Guard::not(self.factor()?))
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error(&["')'", "'&'", "'|'"]));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c == b'0' || c == b'1' => {
                self.pos += 1;
                // "10" or "1a" are not constants
                if matches!(self.src.get(self.pos), Some(c) if c.is_ascii_alphanumeric() || *c == b'_')
                {
                    return Err(self.error(&["'&'", "'|'", "')'", "end of input"]));
                }
                Ok(Guard::Const(c == b'1'))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while matches!(self.src.get(self.pos), Some(c) if c.is_ascii_alphanumeric() || *c == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                Ok(Guard::Var(name.to_string()))
            }
            _ => Err(self.error(EXPECTED)),
        }
    }
}

impl fmt::Display for Guard {
    /// Canonical text; nested And/Or children are always parenthesized.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::Const(b) => write!(f, "{}", *b as u8),
            Guard::Var(v) => f.write_str(v),
            Guard::Not(c) => {
                f.write_str("!")?;
                match **c {
                    Guard::And(_) | Guard::Or(_) => write!(f, "({c})"),
                    _ => write!(f, "{c}"),
                }
            }
            Guard::And(cs) | Guard::Or(cs) => {
                let op = if matches!(self, Guard::And(_)) { " & " } else { " | " };
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    match c {
                        Guard::And(_) | Guard::Or(_) => write!(f, "({c})")?,
                        _ => write!(f, "{c}")?,
                    }
                }
                Ok(())
            }
        }
    }
}

pub fn print_guard(g: &Guard) -> String {
    g.to_string()
}
