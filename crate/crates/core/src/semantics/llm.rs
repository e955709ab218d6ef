//! Provider backed by an OpenAI-compatible chat-completions endpoint.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    Assignment, Exchange, InterfaceSignature, Provenance, ProviderError, SemanticsProvider,
    SpecDocument,
};
use crate::gate::Gate;
use crate::model::{AbstractGraph, SemanticFsm, StateMapping};
use crate::yaml::{parse_fsm_yaml, serialize_fsm_yaml};

fn default_token_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_attempts() -> u32 {
    3
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout() -> u64 {
    120
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    /// Attempts per request before giving up on malformed replies.
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Total tokens (as reported by the endpoint) this provider may spend.
    #[serde(default)]
    pub token_budget: Option<u64>,
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Directory overriding the built-in prompt templates.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        LlmConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            token_env: default_token_env(),
            max_attempts: default_attempts(),
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
            token_budget: None,
            temperature: None,
            prompts_dir: None,
        }
    }
}

/// Prompt text with `{PLACEHOLDER}` slots:
///
/// * `assign`: `{PHASES}`, `{EDGE_LIST}`
/// * `spec`: `{YAML}`
/// * `reconstruct`: `{SPEC}`, `{INTERFACE}`, `{STATE_MAPPING}`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: String,
    pub assign: String,
    pub spec: String,
    pub reconstruct: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            system: include_str!("../../prompts/system.txt").into(),
            assign: include_str!("../../prompts/assign.txt").into(),
            spec: include_str!("../../prompts/spec.txt").into(),
            reconstruct: include_str!("../../prompts/reconstruct.txt").into(),
        }
    }
}

impl PromptTemplates {
    /// Loads `<name>.txt` files from `dir`, keeping defaults for absent ones.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = PromptTemplates::default();
        for (name, slot) in [
            ("system", &mut t.system),
            ("assign", &mut t.assign),
            ("spec", &mut t.spec),
            ("reconstruct", &mut t.reconstruct),
        ] {
            let p = dir.join(format!("{name}.txt"));
            if p.exists() {
                *slot = std::fs::read_to_string(p)?;
            }
        }
        Ok(t)
    }
}

pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    slots
        .iter()
        .fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal HTTP seam so the provider can be exercised without a network.
pub trait Transport: Send + Sync {
    /// POST `body` as JSON with a bearer token. `Err` means no HTTP response.
    fn post_json(&self, url: &str, token: &str, body: &serde_json::Value) -> Result<TransportResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, token: &str, body: &serde_json::Value) -> Result<TransportResponse, String> {
        let mut resp = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {token}"))
            .send_json(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(TransportResponse { status, body })
    }
}

/// Fenced code blocks as `(info string, body)` pairs.
pub fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let t = line.trim_start();
        match open.as_mut() {
            None => {
                if let Some(info) = t.strip_prefix("```") {
                    open = Some((info.trim().to_ascii_lowercase(), Vec::new()));
                }
            }
            Some((_, body)) => {
                if t.trim_end() == "```" {
                    let (info, body) = open.take().expect("open block");
                    out.push((info, body.join("\n")));
                } else {
                    body.push(line);
                }
            }
        }
    }
    out
}

fn first_block<'a>(blocks: &'a [(String, String)], infos: &[&str]) -> Option<&'a str> {
    blocks.iter().find(|(i, _)| infos.contains(&i.as_str())).map(|(_, b)| b.as_str())
}

fn prose_outside_fences(text: &str) -> String {
    let mut inside = false;
    let mut kept = Vec::new();
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            inside = !inside;
        } else if !inside {
            kept.push(line);
        }
    }
    kept.join("\n").trim().to_string()
}

pub struct LlmProvider<T: Transport = UreqTransport> {
    cfg: LlmConfig,
    transport: T,
    templates: PromptTemplates,
    token: Option<String>,
    gate: Gate,
    used: AtomicU64,
}

impl LlmProvider<UreqTransport> {
    /// Reads the token from `cfg.token_env` and templates from
    /// `cfg.prompts_dir` when set.
    pub fn from_config(cfg: LlmConfig) -> std::io::Result<Self> {
        let templates = match &cfg.prompts_dir {
            Some(d) => PromptTemplates::from_dir(d)?,
            None => PromptTemplates::default(),
        };
        let token = std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty());
        let transport = UreqTransport::new(Duration::from_secs(cfg.timeout_secs));
        Ok(LlmProvider::new(cfg, transport, templates, token))
    }
}

impl<T: Transport> LlmProvider<T> {
    pub fn new(cfg: LlmConfig, transport: T, templates: PromptTemplates, token: Option<String>) -> Self {
        let gate = Gate::new(cfg.max_in_flight);
        LlmProvider { cfg, transport, templates, token, gate, used: AtomicU64::new(0) }
    }

    pub fn tokens_used(&self) -> u64 {
        self.used.load(Ordering::Relaxed)
    }

    fn chat<R>(
        &self,
        task: &str,
        prompt: String,
        extra: Option<(&str, serde_json::Value)>,
        log: &mut Provenance,
        parse: impl Fn(&str) -> Result<R, String>,
    ) -> Result<R, ProviderError> {
        let token = self
            .token
            .as_deref()
            .ok_or_else(|| ProviderError::Auth(format!("${} is not set", self.cfg.token_env)))?;
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": self.templates.system},
                {"role": "user", "content": prompt},
            ],
        });
        if let Some(t) = self.cfg.temperature {
            body["temperature"] = json!(t);
        }
        if let Some((k, v)) = extra {
            body[k] = v;
        }

        let attempts = self.cfg.max_attempts.max(1);
        let mut last = ProviderError::Unparseable { attempts: 0, detail: "no attempt made".into() };
        for attempt in 1..=attempts {
            if let Some(budget) = self.cfg.token_budget {
                let used = self.tokens_used();
                if used >= budget {
                    return Err(ProviderError::TokenBudget { used, budget });
                }
            }
            let resp = self.gate.run(|| self.transport.post_json(&self.cfg.endpoint, token, &body));
            let mut exchange = Exchange {
                task: task.to_string(),
                attempt,
                request: body.clone(),
                status: None,
                response: String::new(),
            };
            let resp = match resp {
                Ok(r) => r,
                Err(e) => {
                    exchange.response = e.clone();
                    log.push(exchange);
                    last = ProviderError::Network(e);
                    continue;
                }
            };
            exchange.status = Some(resp.status);
            exchange.response = resp.body.clone();
            log.push(exchange);

            match resp.status {
                200..=299 => {}
                401 | 403 => return Err(ProviderError::Auth(format!("HTTP {}", resp.status))),
                408 | 429 | 500..=599 => {
                    last = ProviderError::Network(format!("HTTP {}", resp.status));
                    continue;
                }
                s => return Err(ProviderError::Network(format!("HTTP {s}: {}", resp.body))),
            }

            let parsed: serde_json::Value = match serde_json::from_str(&resp.body) {
                Ok(v) => v,
                Err(e) => {
                    last = ProviderError::Unparseable { attempts: attempt, detail: format!("response JSON: {e}") };
                    continue;
                }
            };
            if let Some(n) = parsed.pointer("/usage/total_tokens").and_then(|v| v.as_u64()) {
                self.used.fetch_add(n, Ordering::Relaxed);
            }
            let Some(content) = parsed.pointer("/choices/0/message/content").and_then(|v| v.as_str()) else {
                last = ProviderError::Unparseable { attempts: attempt, detail: "no message content".into() };
                continue;
            };
            match parse(content) {
                Ok(r) => return Ok(r),
                Err(detail) => last = ProviderError::Unparseable { attempts: attempt, detail },
            }
        }
        Err(last)
    }
}

fn describe_phases(g: &AbstractGraph) -> String {
    let mut s = format!("reset state: {}\n", g.reset_state);
    for (i, p) in g.phases.iter().enumerate() {
        let members: Vec<String> = p.members.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "phase {i}: entry {}, exit {}, states [{}]", p.entry, p.exit, members.join(", "));
    }
    s
}

fn describe_edges(g: &AbstractGraph) -> String {
    g.edges.iter().map(|(a, b)| format!("{a} -> {b}\n")).collect()
}

fn describe_interface(iface: &InterfaceSignature) -> String {
    let mut s = format!("module: {}\nclock: {}\nreset: {}\ninputs: [{}]\noutputs:\n",
        iface.name, iface.clock, iface.reset_signal, iface.inputs.join(", "));
    for o in &iface.outputs {
        let _ = writeln!(s, "  {}: {}", o.name, o.width);
    }
    s
}

fn parse_fsm_block(content: &str) -> Result<SemanticFsm, String> {
    let blocks = fenced_blocks(content);
    let yaml = first_block(&blocks, &["yaml", "yml"]).ok_or("no ```yaml block in response")?;
    parse_fsm_yaml(yaml).map_err(|e| e.to_string())
}

impl<T: Transport> SemanticsProvider for LlmProvider<T> {
    fn name(&self) -> &str {
        &self.cfg.model
    }

    fn assign_semantics(
        &self,
        g: &AbstractGraph,
        seed: u64,
        log: &mut Provenance,
    ) -> Result<Assignment, ProviderError> {
        let prompt = render(
            &self.templates.assign,
            &[("PHASES", &describe_phases(g)), ("EDGE_LIST", &describe_edges(g))],
        );
        self.chat("assign_semantics", prompt, Some(("seed", json!(seed))), log, |content| {
            let fsm = parse_fsm_block(content)?;
            let blocks = fenced_blocks(content);
            let m = first_block(&blocks, &["mapping"]).ok_or("no ```mapping block in response")?;
            let pairs: std::collections::BTreeMap<u32, String> =
                serde_yaml::from_str(m).map_err(|e| format!("mapping: {e}"))?;
            Ok(Assignment { fsm, mapping: StateMapping { pairs }, story: prose_outside_fences(content) })
        })
    }

    fn spec_from_fsm(&self, f: &SemanticFsm, log: &mut Provenance) -> Result<SpecDocument, ProviderError> {
        let yaml = serialize_fsm_yaml(f).map_err(|e| ProviderError::Reconstruction(e.to_string()))?;
        let prompt = render(&self.templates.spec, &[("YAML", &yaml)]);
        let iface = InterfaceSignature::of(f);
        self.chat("spec_from_fsm", prompt, None, log, |content| {
            let blocks = fenced_blocks(content);
            let text = first_block(&blocks, &["markdown", "md"]).unwrap_or(content);
            let doc = SpecDocument::from_markdown(text)?;
            let missing = doc.missing_signals(&iface);
            if !missing.is_empty() {
                return Err(format!("I/O section omits {}", missing.join(", ")));
            }
            if doc.requirements.is_empty() {
                return Err("empty requirements section".into());
            }
            Ok(doc)
        })
    }

    fn fsm_from_spec(
        &self,
        spec: &SpecDocument,
        mapping: &StateMapping,
        iface: &InterfaceSignature,
        log: &mut Provenance,
    ) -> Result<SemanticFsm, ProviderError> {
        let names: Vec<&str> = mapping.pairs.values().map(String::as_str).collect();
        let prompt = render(
            &self.templates.reconstruct,
            &[
                ("SPEC", &spec.to_markdown()),
                ("INTERFACE", &describe_interface(iface)),
                ("STATE_MAPPING", &names.join(", ")),
            ],
        );
        self.chat("fsm_from_spec", prompt, None, log, parse_fsm_block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests::toggle;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    /// Replays canned replies in order, repeating the last one.
    struct Canned {
        replies: Vec<Result<TransportResponse, String>>,
        calls: AtomicUsize,
    }

    impl Canned {
        fn new(replies: Vec<Result<TransportResponse, String>>) -> Self {
            Canned { replies, calls: AtomicUsize::new(0) }
        }
        fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl Transport for Canned {
        fn post_json(&self, _: &str, _: &str, _: &serde_json::Value) -> Result<TransportResponse, String> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies[i.min(self.replies.len() - 1)].clone()
        }
    }

    impl Transport for Arc<Canned> {
        fn post_json(&self, u: &str, t: &str, b: &serde_json::Value) -> Result<TransportResponse, String> {
            self.as_ref().post_json(u, t, b)
        }
    }

    fn chat_reply(content: &str, tokens: u64) -> Result<TransportResponse, String> {
        let body = json!({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"total_tokens": tokens},
        });
        Ok(TransportResponse { status: 200, body: body.to_string() })
    }

    fn provider(t: Arc<Canned>) -> LlmProvider<Arc<Canned>> {
        let cfg = LlmConfig::new("http://localhost/v1/chat/completions", "test-model");
        LlmProvider::new(cfg, t, PromptTemplates::default(), Some("tok".into()))
    }

    fn iface_and_mapping() -> (InterfaceSignature, StateMapping) {
        let f = toggle();
        let m = StateMapping { pairs: [(0, "A".to_string()), (1, "B".to_string())].into() };
        (InterfaceSignature::of(&f), m)
    }

    const TOGGLE_YAML: &str = "name: toggle\nclock: clk\nreset: {signal: rst, kind: synchronous, active: high, state: A}\ninputs: [en]\noutputs: {y: 1}\nstates:\n  A:\n    outputs: {y: 0}\n    transitions:\n      - {guard: \"en\", next: B}\n  B:\n    outputs: {y: 1}\n    transitions:\n      - {guard: \"en\", next: A}\n";

    #[test]
    fn fixed_yaml_reply_parses() {
        let t = Arc::new(Canned::new(vec![chat_reply(&format!("Here:\n```yaml\n{TOGGLE_YAML}```\n"), 10)]));
        let p = provider(t.clone());
        let (iface, m) = iface_and_mapping();
        let doc = SpecDocument::new("x", vec!["y".into()]);
        let mut log = Vec::new();
        let f = p.fsm_from_spec(&doc, &m, &iface, &mut log).unwrap();
        assert_eq!(f, toggle());
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].status, Some(200));
        assert_eq!(p.tokens_used(), 10);
        let prompt = log[0].request["messages"][1]["content"].as_str().unwrap();
        assert!(prompt.contains("inputs: [en]") && prompt.contains("A, B"));
        assert!(!prompt.contains("{SPEC}"));
    }

    #[test]
    fn prose_only_reply_is_unparseable_after_retries() {
        let t = Arc::new(Canned::new(vec![chat_reply("I think it toggles.", 1)]));
        let p = provider(t.clone());
        let (iface, m) = iface_and_mapping();
        let mut log = Vec::new();
        let err = p.fsm_from_spec(&SpecDocument::new("x", vec![]), &m, &iface, &mut log).unwrap_err();
        assert_eq!(err, ProviderError::Unparseable { attempts: 3, detail: "no ```yaml block in response".into() });
        assert_eq!(err.code(), "UNPARSEABLE");
        assert_eq!(t.calls(), 3);
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn retry_recovers() {
        let t = Arc::new(Canned::new(vec![
            Err("connection reset".into()),
            chat_reply("no yaml", 1),
            chat_reply(&format!("```yaml\n{TOGGLE_YAML}```"), 1),
        ]));
        let p = provider(t.clone());
        let (iface, m) = iface_and_mapping();
        let mut log = Vec::new();
        assert!(p.fsm_from_spec(&SpecDocument::new("x", vec![]), &m, &iface, &mut log).is_ok());
        assert_eq!(t.calls(), 3);
    }

    #[test]
    fn distinct_error_codes() {
        let (iface, m) = iface_and_mapping();
        let doc = SpecDocument::new("x", vec![]);
        let mut log = Vec::new();

        let t = Arc::new(Canned::new(vec![Err("dns failure".into())]));
        let e = provider(t).fsm_from_spec(&doc, &m, &iface, &mut log).unwrap_err();
        assert_eq!(e.code(), "NETWORK");

        let t = Arc::new(Canned::new(vec![Ok(TransportResponse { status: 401, body: "{}".into() })]));
        let e = provider(t.clone()).fsm_from_spec(&doc, &m, &iface, &mut log).unwrap_err();
        assert_eq!(e.code(), "AUTH");
        assert_eq!(t.calls(), 1);

        let t = Arc::new(Canned::new(vec![chat_reply("x", 1)]));
        let cfg = LlmConfig::new("u", "m");
        let p = LlmProvider::new(cfg, t.clone(), PromptTemplates::default(), None);
        assert_eq!(p.fsm_from_spec(&doc, &m, &iface, &mut log).unwrap_err().code(), "AUTH");
        assert_eq!(t.calls(), 0);

        let t = Arc::new(Canned::new(vec![chat_reply("no yaml", 50)]));
        let mut cfg = LlmConfig::new("u", "m");
        cfg.token_budget = Some(60);
        cfg.max_attempts = 5;
        let p = LlmProvider::new(cfg, t.clone(), PromptTemplates::default(), Some("k".into()));
        let e = p.fsm_from_spec(&doc, &m, &iface, &mut log).unwrap_err();
        assert_eq!(e, ProviderError::TokenBudget { used: 100, budget: 60 });
        assert_eq!(t.calls(), 2);
    }

    #[test]
    fn assign_reads_yaml_and_mapping() {
        let content = format!("A light switch.\n```yaml\n{TOGGLE_YAML}```\n```mapping\n0: A\n1: B\n```\n");
        let t = Arc::new(Canned::new(vec![chat_reply(&content, 5)]));
        let g = AbstractGraph {
            states: vec![0, 1],
            reset_state: 0,
            phases: vec![crate::model::Phase { entry: 0, exit: 1, members: vec![0, 1] }],
            edges: [(0, 1), (1, 0)].into_iter().collect(),
        };
        let mut log = Vec::new();
        let a = provider(t).assign_semantics(&g, 7, &mut log).unwrap();
        assert_eq!(a.fsm, toggle());
        assert_eq!(a.mapping.get(1), Some("B"));
        assert_eq!(a.story, "A light switch.");
        assert_eq!(log[0].request["seed"], 7);
        let prompt = log[0].request["messages"][1]["content"].as_str().unwrap();
        assert!(prompt.contains("0 -> 1\n1 -> 0"));
        assert!(prompt.contains("phase 0: entry 0, exit 1, states [0, 1]"));
    }

    #[test]
    fn spec_reply_must_name_every_signal() {
        let f = toggle();
        let good = "```markdown\n## Inputs and Outputs\n`clk`, `rst`, `en`, `y`\n\n## Requirements\n1. Toggle on en.\n```";
        let bad = "## Inputs and Outputs\n`clk`, `en`\n## Requirements\n1. Toggle.";
        let t = Arc::new(Canned::new(vec![chat_reply(bad, 1), chat_reply(good, 1)]));
        let mut log = Vec::new();
        let doc = provider(t.clone()).spec_from_fsm(&f, &mut log).unwrap();
        assert_eq!(doc.requirements, vec!["Toggle on en."]);
        assert_eq!(t.calls(), 2);
    }

    #[test]
    fn in_flight_cap_holds() {
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Transport for Slow {
            fn post_json(&self, _: &str, _: &str, _: &serde_json::Value) -> Result<TransportResponse, String> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(20));
                self.now.fetch_sub(1, Ordering::SeqCst);
                chat_reply(&format!("```yaml\n{TOGGLE_YAML}```"), 1)
            }
        }
        let mut cfg = LlmConfig::new("u", "m");
        cfg.max_in_flight = 2;
        let slow = Slow { now: AtomicUsize::new(0), peak: AtomicUsize::new(0) };
        let p = LlmProvider::new(cfg, slow, PromptTemplates::default(), Some("k".into()));
        let (iface, m) = iface_and_mapping();
        std::thread::scope(|s| {
            for _ in 0..6 {
                s.spawn(|| {
                    let mut log = Vec::new();
                    p.fsm_from_spec(&SpecDocument::new("x", vec![]), &m, &iface, &mut log).unwrap();
                });
            }
        });
        assert!(p.transport.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn fences_and_templates() {
        let b = fenced_blocks("a\n```yaml\nx: 1\n```\nb\n``` Mapping\n0: A\n```");
        assert_eq!(b, vec![("yaml".into(), "x: 1".into()), ("mapping".into(), "0: A".into())]);
        assert_eq!(render("{A}-{B}-{A}", &[("A", "1"), ("B", "2")]), "1-2-1");
        let t = PromptTemplates::default();
        assert!(t.assign.contains("{EDGE_LIST}") && t.assign.contains("{PHASES}"));
        assert!(t.spec.contains("{YAML}"));
        assert!(t.reconstruct.contains("{STATE_MAPPING}"));
        let cfg: LlmConfig =
            serde_json::from_value(json!({"endpoint": "e", "model": "m", "max_attempts": 2})).unwrap();
        assert_eq!((cfg.max_attempts, cfg.max_in_flight, cfg.token_env.as_str()), (2, 4, "OPENAI_API_KEY"));
    }
}
