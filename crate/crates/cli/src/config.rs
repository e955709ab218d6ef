//! Optional TOML configuration. Every field has a flag that overrides it.

use std::path::Path;

use fsmbench_core::semantics::LlmConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub gen: GenSection,
    #[serde(default)]
    pub eval: EvalSection,
    pub llm: Option<LlmConfig>,
    /// Worker threads for `gen` and `eval`.
    pub jobs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    pub provider: Option<String>,
    pub attempt_factor: Option<usize>,
    pub tail_len: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub sim_cmd: Option<String>,
    pub timeout_secs: Option<u64>,
    pub sim_jobs: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }
}
