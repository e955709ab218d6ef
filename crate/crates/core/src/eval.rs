//! Candidate evaluation against a persisted dataset.
//!
//! The YAML pipeline is hermetic: candidates are replayed on the golden
//! input sequence with the native simulator. The RTL pipeline shells out
//! to a user-supplied simulator command and reads the testbench sentinels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emit::{FAIL_SENTINEL, PASS_SENTINEL};
use crate::gate::Gate;
use crate::model::{SemanticFsm, Tier};
use crate::pipeline::{load_problem, Manifest, PersistError, StoredProblem};
use crate::sim::{run, Trace};
use crate::yaml::parse_fsm_yaml;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    /// Spec → RTL, checked by an external simulator.
    Rtl,
    /// Spec → YAML → RTL, checked natively.
    Yaml,
}

impl Pipeline {
    pub fn extensions(self) -> &'static [&'static str] {
        match self {
            Pipeline::Rtl => &["sv", "v"],
            Pipeline::Yaml => &["yaml", "yml"],
        }
    }
}

impl std::str::FromStr for Pipeline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rtl" | "p1" => Ok(Pipeline::Rtl),
            "yaml" | "p2" => Ok(Pipeline::Yaml),
            _ => Err(format!("unknown pipeline `{s}` (expected rtl or yaml)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    CompileFail { detail: String },
    ParseFail { detail: String },
    Mismatch { cycle: usize, signal: String },
    ToolError { detail: String },
}

impl Outcome {
    pub fn is_pass(&self) -> bool {
        matches!(self, Outcome::Pass)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub problem: String,
    pub pipeline: Pipeline,
    #[serde(flatten)]
    pub outcome: Outcome,
}

/// Replays `golden`'s inputs through the candidate and compares outputs by
/// name. Port order may differ; port names and widths may not.
pub fn eval_yaml_candidate(reference: &SemanticFsm, golden: &Trace, candidate_yaml: &str) -> Outcome {
    let cand = match parse_fsm_yaml(candidate_yaml) {
        Ok(c) => c,
        Err(e) => return Outcome::ParseFail { detail: e.to_string() },
    };
    let diff = reference.interface_diff(&cand);
    if !diff.is_empty() {
        return Outcome::ParseFail { detail: format!("interface mismatch: {}", diff.join(", ")) };
    }
    let trace = match run(&cand, &golden.input_valuations()) {
        Ok(t) => t,
        Err(e) => return Outcome::ToolError { detail: e.to_string() },
    };
    let columns: Vec<(usize, usize)> = golden
        .output_names
        .iter()
        .enumerate()
        .map(|(gi, name)| {
            let ci = trace.output_names.iter().position(|n| n == name).expect("interfaces match");
            (gi, ci)
        })
        .collect();
    for (t, (want, got)) in golden.rows.iter().zip(&trace.rows).enumerate() {
        for &(gi, ci) in &columns {
            if want.outputs[gi] != got.outputs[ci] {
                return Outcome::Mismatch { cycle: t, signal: golden.output_names[gi].clone() };
            }
        }
    }
    Outcome::Pass
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    /// Shell command with `{sources}`, `{top}` and optionally `{workdir}`.
    pub cmd: String,
    pub timeout: Duration,
}

impl SimConfig {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

    pub fn new(cmd: impl Into<String>) -> Self {
        SimConfig { cmd: cmd.into(), timeout: Self::DEFAULT_TIMEOUT }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("simulator not found: {0}")]
    SimulatorMissing(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] PersistError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// First `module <name>` declared in `src`.
pub fn first_module_name(src: &str) -> Option<String> {
    src.lines().find_map(|l| {
        let rest = l.trim_start().strip_prefix("module")?;
        if !rest.starts_with(char::is_whitespace) {
            return None;
        }
        let rest = rest.trim_start();
        let name: String = if let Some(esc) = rest.strip_prefix('\\') {
            esc.chars().take_while(|c| !c.is_whitespace()).collect()
        } else {
            rest.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_' || *c == '$').collect()
        };
        (!name.is_empty()).then_some(name)
    })
}

/// Parses `LLMFSM_FAIL cycle=<t> signal=<name> ...`.
pub fn parse_fail_line(line: &str) -> Option<(usize, String)> {
    let rest = line.trim().strip_prefix(FAIL_SENTINEL)?;
    let mut cycle = None;
    let mut signal = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("cycle=") {
            cycle = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("signal=") {
            signal = Some(v.to_string());
        }
    }
    Some((cycle?, signal?))
}

/// Classifies simulator output per the sentinel contract.
pub fn classify_sim_output(stdout: &str, exit_ok: bool, stderr: &str) -> Outcome {
    for line in stdout.lines() {
        if line.trim_start().starts_with(FAIL_SENTINEL) {
            return match parse_fail_line(line) {
                Some((cycle, signal)) => Outcome::Mismatch { cycle, signal },
                None => Outcome::ToolError { detail: format!("malformed sentinel: {}", line.trim()) },
            };
        }
        if line.trim() == PASS_SENTINEL {
            return Outcome::Pass;
        }
    }
    let tail: String = stderr.lines().rev().take(5).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n");
    if !exit_ok {
        Outcome::CompileFail { detail: tail }
    } else {
        Outcome::ToolError { detail: format!("no sentinel in simulator output{}", if tail.is_empty() { String::new() } else { format!(": {tail}") }) }
    }
}

struct Finished {
    status: Option<std::process::ExitStatus>,
    stdout: String,
    stderr: String,
}

fn run_with_timeout(cmd: &str, timeout: Duration) -> std::io::Result<Finished> {
    let mut command = Command::new("sh");
    command.arg("-c").arg(cmd).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }
    let mut child = command.spawn()?;
    let mut out = child.stdout.take().expect("piped");
    let mut err = child.stderr.take().expect("piped");
    let out_h = std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = out.read_to_end(&mut s);
        String::from_utf8_lossy(&s).into_owned()
    });
    let err_h = std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = err.read_to_end(&mut s);
        String::from_utf8_lossy(&s).into_owned()
    });
    let deadline = Instant::now() + timeout;
    let status = loop {
        if let Some(s) = child.try_wait()? {
            break Some(s);
        }
        if Instant::now() >= deadline {
            #[cfg(unix)]
            let _ = Command::new("kill").args(["-s", "KILL", "--"]).arg(format!("-{}", child.id())).status();
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(20));
    };
    Ok(Finished {
        status,
        stdout: out_h.join().unwrap_or_default(),
        stderr: err_h.join().unwrap_or_default(),
    })
}

/// Runs `candidate_sv` against the problem's `tb.sv` under `sim`.
pub fn eval_rtl_candidate(
    problem: &StoredProblem,
    candidate_sv: &Path,
    sim: &SimConfig,
) -> Result<Outcome, EvalError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| EvalError::Io { path: p, message: e.to_string() }
    };
    let candidate = std::fs::read_to_string(candidate_sv).map_err(io(candidate_sv))?;
    if first_module_name(&candidate).is_none() {
        return Ok(Outcome::CompileFail { detail: "candidate declares no module".into() });
    }
    let tb_path = problem.dir.join("tb.sv");
    let tb = std::fs::read_to_string(&tb_path).map_err(io(&tb_path))?;
    let top = first_module_name(&tb)
        .ok_or_else(|| EvalError::Dataset(PersistError::Integrity(format!("{}: no testbench module", problem.id))))?;

    let work = tempfile::Builder::new().prefix("fsmbench-eval").tempdir().map_err(io(Path::new("tmp")))?;
    let dut = work.path().join("dut.sv");
    let tbc = work.path().join("tb.sv");
    std::fs::write(&dut, &candidate).map_err(io(&dut))?;
    std::fs::write(&tbc, &tb).map_err(io(&tbc))?;
    let sources = format!("{} {}", shell_quote(&dut), shell_quote(&tbc));
    let cmd = sim
        .cmd
        .replace("{sources}", &sources)
        .replace("{top}", &top)
        .replace("{workdir}", &shell_quote(work.path()));

    let done = run_with_timeout(&cmd, sim.timeout).map_err(|e| EvalError::Config(format!("cannot run sh: {e}")))?;
    let Some(status) = done.status else {
        return Ok(Outcome::ToolError { detail: format!("timeout after {} s", sim.timeout.as_secs_f64()) });
    };
    if status.code() == Some(127) {
        let first = done.stderr.lines().next().unwrap_or("command not found").to_string();
        return Err(EvalError::SimulatorMissing(first));
    }
    Ok(classify_sim_output(&done.stdout, status.success(), &done.stderr))
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("pass@k needs 0 <= c <= n and 1 <= k <= n (got n={n}, c={c}, k={k})")]
pub struct RangeError {
    pub n: u64,
    pub c: u64,
    pub k: u64,
}

/// Unbiased pass@k estimator `1 - C(n-c, k) / C(n, k)`, evaluated as
/// `1 - Π_{i=n-c+1..=n} (1 - k/i)`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, RangeError> {
    if c > n || k == 0 || k > n {
        return Err(RangeError { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let prod: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - prod)
}

pub const REPORT_KS: [u64; 5] = [1, 2, 4, 8, 16];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleResult {
    pub file: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemResult {
    pub id: String,
    pub tier: Tier,
    pub samples: Vec<SampleResult>,
}

impl ProblemResult {
    pub fn correct(&self) -> usize {
        self.samples.iter().filter(|s| s.outcome.is_pass()).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateBlock {
    pub problems: usize,
    pub evaluated: usize,
    pub missing: usize,
    pub samples: usize,
    pub passed: usize,
    /// `k → mean pass@k` over problems with at least `k` samples; `null`
    /// when no problem qualifies.
    pub pass_at: BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pipeline: Pipeline,
    pub totals: RateBlock,
    pub tiers: BTreeMap<Tier, RateBlock>,
    pub problems: Vec<ProblemResult>,
    pub missing: Vec<String>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn all_passed(&self) -> bool {
        self.problems.iter().all(|p| p.samples.iter().all(|s| s.outcome.is_pass()))
    }
}

fn rate_block(results: &[&ProblemResult], missing: usize) -> RateBlock {
    let max_n = results.iter().map(|r| r.samples.len() as u64).max().unwrap_or(0);
    let mut pass_at = BTreeMap::new();
    for k in REPORT_KS {
        if k > 1 && k > max_n {
            continue;
        }
        let vals: Vec<f64> = results
            .iter()
            .filter(|r| r.samples.len() as u64 >= k)
            .map(|r| pass_at_k(r.samples.len() as u64, r.correct() as u64, k).expect("in range"))
            .collect();
        let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        pass_at.insert(k.to_string(), mean);
    }
    RateBlock {
        problems: results.len() + missing,
        evaluated: results.len(),
        missing,
        samples: results.iter().map(|r| r.samples.len()).sum(),
        passed: results.iter().map(|r| r.correct()).sum(),
        pass_at,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub pipeline: Pipeline,
    pub sim: Option<SimConfig>,
    /// Worker threads; 0 means rayon's default.
    pub jobs: usize,
    /// Concurrent simulator processes.
    pub sim_jobs: usize,
}

impl EvalOptions {
    pub fn new(pipeline: Pipeline) -> Self {
        EvalOptions { pipeline, sim: None, jobs: 0, sim_jobs: 2 }
    }
}

/// `sample_<j>.<ext>` files in `dir`, ordered by `j`.
fn sample_files(dir: &Path, exts: &[&str]) -> Vec<PathBuf> {
    let Ok(rd) = std::fs::read_dir(dir) else { return Vec::new() };
    let mut files: Vec<(u64, PathBuf)> = rd
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter_map(|p| {
            let ext = p.extension()?.to_str()?;
            if !exts.contains(&ext) {
                return None;
            }
            let j: u64 = p.file_stem()?.to_str()?.strip_prefix("sample_")?.parse().ok()?;
            Some((j, p))
        })
        .collect();
    files.sort();
    files.into_iter().map(|(_, p)| p).collect()
}

/// Evaluates `candidates/<id>/sample_<j>.<ext>` for every problem in the
/// dataset manifest.
pub fn evaluate_run(dataset: &Path, candidates: &Path, opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    if opts.pipeline == Pipeline::Rtl && opts.sim.is_none() {
        return Err(EvalError::Config("the rtl pipeline needs a simulator command".into()));
    }
    let manifest = Manifest::load(dataset)?;
    let known: BTreeSet<&str> = manifest.problems.iter().map(|p| p.id.as_str()).collect();
    let mut warnings = Vec::new();
    if let Ok(rd) = std::fs::read_dir(candidates) {
        let mut extra: Vec<String> = rd
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| !known.contains(n.as_str()))
            .collect();
        extra.sort();
        warnings.extend(extra.into_iter().map(|n| format!("candidates for unknown problem `{n}`")));
    } else {
        warnings.push(format!("candidates directory {} is unreadable", candidates.display()));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let gate = Gate::new(opts.sim_jobs);

    let work: Vec<(&crate::pipeline::ManifestEntry, Vec<PathBuf>)> = manifest
        .problems
        .iter()
        .map(|p| (p, sample_files(&candidates.join(&p.id), opts.pipeline.extensions())))
        .collect();

    let evaluated: Vec<Result<Option<ProblemResult>, EvalError>> = pool.install(|| {
        work.par_iter()
            .map(|(entry, files)| {
                if files.is_empty() {
                    return Ok(None);
                }
                let problem = load_problem(dataset, entry)?;
                let samples = files
                    .iter()
                    .map(|f| {
                        let outcome = match opts.pipeline {
                            Pipeline::Yaml => {
                                let text = std::fs::read_to_string(f).map_err(|e| EvalError::Io {
                                    path: f.clone(),
                                    message: e.to_string(),
                                })?;
                                eval_yaml_candidate(&problem.fsm, &problem.golden, &text)
                            }
                            Pipeline::Rtl => {
                                let sim = opts.sim.as_ref().expect("checked above");
                                gate.run(|| eval_rtl_candidate(&problem, f, sim))?
                            }
                        };
                        let file = f.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                        Ok(SampleResult { file, outcome })
                    })
                    .collect::<Result<Vec<_>, EvalError>>()?;
                Ok(Some(ProblemResult { id: entry.id.clone(), tier: entry.tier, samples }))
            })
            .collect()
    });

    let mut problems = Vec::new();
    let mut missing = Vec::new();
    for ((entry, _), r) in work.iter().zip(evaluated) {
        match r? {
            Some(p) => problems.push(p),
            None => missing.push(entry.id.clone()),
        }
    }

    let all: Vec<&ProblemResult> = problems.iter().collect();
    let totals = rate_block(&all, missing.len());
    let mut tiers = BTreeMap::new();
    for tier in Tier::ALL {
        let rs: Vec<&ProblemResult> = problems.iter().filter(|p| p.tier == tier).collect();
        let miss = manifest.problems.iter().filter(|p| p.tier == tier && missing.contains(&p.id)).count();
        if rs.is_empty() && miss == 0 {
            continue;
        }
        tiers.insert(tier, rate_block(&rs, miss));
    }
    Ok(EvalReport { pipeline: opts.pipeline, totals, tiers, problems, missing, warnings })
}
