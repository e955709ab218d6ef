//! Semantics providers: abstract graph → named FSM, FSM → prose
//! specification, and prose specification → FSM.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AbstractGraph, OutputDecl, SemanticFsm, StateMapping};

pub mod llm;
pub mod mock;

pub use llm::{LlmConfig, LlmProvider, PromptTemplates, Transport, TransportResponse, UreqTransport};
pub use mock::MockProvider;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("network failure: {0}")]
    Network(String),
    #[error("authentication failure: {0}")]
    Auth(String),
    #[error("unparseable response after {attempts} attempt(s): {detail}")]
    Unparseable { attempts: u32, detail: String },
    #[error("token budget exhausted ({used} of {budget} tokens)")]
    TokenBudget { used: u64, budget: u64 },
    #[error("reconstruction failed: {0}")]
    Reconstruction(String),
}

impl ProviderError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ProviderError::Network(_) => "NETWORK",
            ProviderError::Auth(_) => "AUTH",
            ProviderError::Unparseable { .. } => "UNPARSEABLE",
            ProviderError::TokenBudget { .. } => "TOKEN_BUDGET",
            ProviderError::Reconstruction(_) => "RECONSTRUCTION",
        }
    }
}

/// Result of naming an abstract graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub fsm: SemanticFsm,
    pub mapping: StateMapping,
    pub story: String,
}

/// Port list a reconstruction must reproduce.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceSignature {
    pub name: String,
    pub clock: String,
    pub reset_signal: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputDecl>,
}

impl InterfaceSignature {
    pub fn of(f: &SemanticFsm) -> Self {
        InterfaceSignature {
            name: f.name.clone(),
            clock: f.clock.clone(),
            reset_signal: f.reset_signal.clone(),
            inputs: f.inputs.clone(),
            outputs: f.outputs.clone(),
        }
    }

    /// Every signal name, clock and reset first.
    pub fn signal_names(&self) -> Vec<&str> {
        let mut v = vec![self.clock.as_str(), self.reset_signal.as_str()];
        v.extend(self.inputs.iter().map(String::as_str));
        v.extend(self.outputs.iter().map(|o| o.name.as_str()));
        v
    }
}

/// One request/response exchange with an external provider.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub task: String,
    pub attempt: u32,
    pub request: serde_json::Value,
    pub status: Option<u16>,
    pub response: String,
}

/// Per-problem log of provider traffic. Mock providers leave it empty.
pub type Provenance = Vec<Exchange>;

pub trait SemanticsProvider: Sync {
    /// Short identifier recorded in problem metadata.
    fn name(&self) -> &str;

    fn assign_semantics(
        &self,
        g: &AbstractGraph,
        seed: u64,
        log: &mut Provenance,
    ) -> Result<Assignment, ProviderError>;

    fn spec_from_fsm(&self, f: &SemanticFsm, log: &mut Provenance) -> Result<SpecDocument, ProviderError>;

    fn fsm_from_spec(
        &self,
        spec: &SpecDocument,
        mapping: &StateMapping,
        iface: &InterfaceSignature,
        log: &mut Provenance,
    ) -> Result<SemanticFsm, ProviderError>;
}

const IO_HEADING: &str = "## Inputs and Outputs";
const REQ_HEADING: &str = "## Requirements";

/// Natural-language specification: an I/O section naming every signal and
/// an ordered list of requirement paragraphs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecDocument {
    pub io_section: String,
    pub requirements: Vec<String>,
    pub word_count: usize,
}

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

impl SpecDocument {
    pub fn new(io_section: impl Into<String>, requirements: Vec<String>) -> Self {
        let io_section = io_section.into();
        let word_count = words(&io_section) + requirements.iter().map(|r| words(r)).sum::<usize>();
        SpecDocument { io_section, requirements, word_count }
    }

    /// Names from `iface` that do not appear verbatim in the I/O section.
    pub fn missing_signals<'a>(&self, iface: &'a InterfaceSignature) -> Vec<&'a str> {
        iface.signal_names().into_iter().filter(|n| !mentions(&self.io_section, n)).collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{IO_HEADING}\n");
        let _ = writeln!(out, "{}\n", self.io_section.trim_end());
        let _ = writeln!(out, "{REQ_HEADING}\n");
        for (i, r) in self.requirements.iter().enumerate() {
            let _ = writeln!(out, "{}. {}", i + 1, r);
        }
        out
    }

    /// Lenient reader: headings are matched case-insensitively by keyword
    /// ("input", "requirement"); requirements are list items or paragraphs.
    pub fn from_markdown(text: &str) -> Result<Self, String> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Io,
            Req,
        }
        let mut io: Option<Vec<&str>> = None;
        let mut req: Option<Vec<&str>> = None;
        let mut current = Section::None;
        for line in text.lines() {
            if let Some(h) = line.trim_start().strip_prefix('#') {
                let h = h.trim_start_matches('#').trim().to_ascii_lowercase();
                if h.contains("requirement") {
                    req = Some(Vec::new());
                    current = Section::Req;
                    continue;
                } else if h.contains("input") || h.contains("interface") {
                    io = Some(Vec::new());
                    current = Section::Io;
                    continue;
                } else if current != Section::None {
                    current = Section::None;
                    continue;
                }
            }
            let target = match current {
                Section::Io => io.as_mut(),
                Section::Req => req.as_mut(),
                Section::None => None,
            };
            if let Some(t) = target {
                t.push(line);
            }
        }
        let io = io.ok_or("missing inputs/outputs section")?;
        let req = req.ok_or("missing requirements section")?;
        let io_section = io.join("\n").trim().to_string();

        let mut items: Vec<String> = Vec::new();
        let mut open = false;
        for line in req {
            let t = line.trim();
            if t.is_empty() {
                open = false;
                continue;
            }
            if let Some(rest) = list_item(t) {
                items.push(rest.to_string());
                open = true;
            } else if open {
                let last = items.last_mut().expect("open item");
                last.push(' ');
                last.push_str(t);
            } else {
                items.push(t.to_string());
                open = true;
            }
        }
        Ok(SpecDocument::new(io_section, items))
    }
}

fn list_item(line: &str) -> Option<&str> {
    if let Some(rest) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
        return Some(rest.trim());
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(r.trim());
        }
    }
    None
}

/// True when `name` occurs in `text` delimited by non-identifier characters.
pub(crate) fn mentions(text: &str, name: &str) -> bool {
    let is_ident = |c: char| c.is_ascii_alphanumeric() || c == '_';
    text.match_indices(name).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + name.len()..].chars().next();
        !before.is_some_and(is_ident) && !after.is_some_and(is_ident)
    })
}
