mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use fsmbench_core::emit::{emit_miter, emit_rtl, emit_testbench, Encoding};
use fsmbench_core::eval::{evaluate_run, EvalError, EvalOptions, Pipeline, SimConfig};
use fsmbench_core::model::{SemanticFsm, StateMapping, Tier};
use fsmbench_core::pipeline::{curate, dataset_stats, CurateError, CurateOptions, CurationReport};
use fsmbench_core::semantics::{LlmProvider, MockProvider, SemanticsProvider};
use fsmbench_core::sim::{read_stimulus_csv, run, Trace};
use fsmbench_core::topo::{graph_from_json, graph_to_json, preset_config, sample_graph};
use fsmbench_core::verify::{check_equivalence, check_isomorphism, VerifyError};
use fsmbench_core::yaml::parse_fsm_yaml;

use config::Config;

const EXIT_NEGATIVE: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "fsmbench", version, about = "FSM benchmark generation, verification and evaluation")]
struct Cli {
    /// TOML configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for `gen` and `eval` (default: logical cores).
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Curate problems into a dataset directory.
    Gen(GenArgs),
    /// Per-tier summary of a dataset.
    Stats {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Sample an abstract graph under a tier preset (JSON).
    Sample {
        #[arg(long, value_enum)]
        tier: TierArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
    /// Emit synthesizable SystemVerilog for an FSM.
    EmitRtl {
        fsm: PathBuf,
        #[arg(long, value_enum, default_value_t = EncodingArg::Onehot)]
        encoding: EncodingArg,
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
    /// Emit a self-checking testbench for a golden trace.
    EmitTb {
        fsm: PathBuf,
        #[arg(long)]
        golden: PathBuf,
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
    /// Emit a miter comparing two FSMs.
    EmitMiter {
        a: PathBuf,
        b: PathBuf,
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
    /// Simulate an FSM on a stimulus CSV and write the trace CSV.
    Sim {
        fsm: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
    /// Check two FSMs for output equivalence (exit 0 equivalent, 1 not).
    Equiv {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        json: bool,
        /// Bound the product search to this many cycles.
        #[arg(long)]
        max_depth: Option<usize>,
    },
    /// Check an FSM against an abstract graph under a state mapping.
    Iso {
        graph: PathBuf,
        fsm: PathBuf,
        mapping: PathBuf,
    },
    /// Evaluate candidate solutions against a dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    tier: TierArg,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    attempt_factor: Option<usize>,
    #[arg(long)]
    tail_len: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, value_enum)]
    pipeline: PipelineArg,
    /// Simulator command with {sources} and {top} placeholders.
    #[arg(long)]
    sim_cmd: Option<String>,
    /// Per-candidate simulator timeout in seconds.
    #[arg(long)]
    timeout: Option<u64>,
    /// Concurrent simulator processes.
    #[arg(long)]
    sim_jobs: Option<usize>,
    #[arg(short = 'o', long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Low,
    Medium,
    High,
    All,
}

impl TierArg {
    fn tiers(self) -> Vec<Tier> {
        match self {
            TierArg::Low => vec![Tier::Low],
            TierArg::Medium => vec![Tier::Medium],
            TierArg::High => vec![Tier::High],
            TierArg::All => Tier::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Llm,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncodingArg {
    Onehot,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Rtl,
    Yaml,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_USAGE, err: err.into() }
}

fn config_err(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_CONFIG, err: err.into() }
}

type CmdResult = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(anyhow!("{}: {e}", path.display())))
}

fn read_fsm(path: &Path) -> Result<SemanticFsm, Failure> {
    parse_fsm_yaml(&read(path)?).map_err(|e| usage(anyhow!("{}: {e}", path.display())))
}

/// Writes to `out`, or stdout when absent or `-`.
fn write_out(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) if p != Path::new("-") => {
            std::fs::write(p, text).map_err(|e| usage(anyhow!("{}: {e}", p.display())))
        }
        _ => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(usage)?,
        None => Config::default(),
    };
    let jobs = cli.jobs.or(cfg.jobs).unwrap_or(0);
    match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a, &cfg, jobs),
        Cmd::Stats { dir, json } => cmd_stats(&dir, json),
        Cmd::Sample { tier, seed, out } => {
            let [tier] = tier.tiers()[..] else {
                return Err(usage(anyhow!("sample needs a single tier")));
            };
            let g = sample_graph(&preset_config(tier, seed)).map_err(config_err)?;
            write_out(out.as_deref(), &(graph_to_json(&g) + "\n"))?;
            Ok(0)
        }
        Cmd::EmitRtl { fsm, encoding, out } => {
            let f = read_fsm(&fsm)?;
            let enc = if encoding == EncodingArg::Binary { Encoding::Binary } else { Encoding::OneHot };
            write_out(out.as_deref(), &emit_rtl(&f, enc).map_err(config_err)?)?;
            Ok(0)
        }
        Cmd::EmitTb { fsm, golden, out } => {
            let f = read_fsm(&fsm)?;
            let trace = Trace::from_csv(&read(&golden)?, &f)
                .map_err(|e| config_err(anyhow!("{}: {e}", golden.display())))?;
            write_out(out.as_deref(), &emit_testbench(&f, &trace).map_err(config_err)?)?;
            Ok(0)
        }
        Cmd::EmitMiter { a, b, out } => {
            let (fa, fb) = (read_fsm(&a)?, read_fsm(&b)?);
            write_out(out.as_deref(), &emit_miter(&fa, &fb).map_err(config_err)?)?;
            Ok(0)
        }
        Cmd::Sim { fsm, inputs, out } => {
            let f = read_fsm(&fsm)?;
            let stim = read_stimulus_csv(&read(&inputs)?, &f.inputs)
                .map_err(|e| config_err(anyhow!("{}: {e}", inputs.display())))?;
            let trace = run(&f, &stim).map_err(config_err)?;
            write_out(out.as_deref(), &trace.to_csv())?;
            Ok(0)
        }
        Cmd::Equiv { a, b, json, max_depth } => cmd_equiv(&a, &b, json, max_depth),
        Cmd::Iso { graph, fsm, mapping } => cmd_iso(&graph, &fsm, &mapping),
        Cmd::Eval(a) => cmd_eval(a, &cfg, jobs),
    }
}

fn cmd_gen(a: GenArgs, cfg: &Config, jobs: usize) -> CmdResult {
    let provider_name = match a.provider {
        Some(ProviderArg::Mock) => "mock".to_string(),
        Some(ProviderArg::Llm) => "llm".to_string(),
        None => cfg.gen.provider.clone().unwrap_or_else(|| "mock".into()),
    };
    let provider: Box<dyn SemanticsProvider> = match provider_name.as_str() {
        "mock" => Box::new(MockProvider),
        "llm" => {
            let llm = cfg.llm.clone().ok_or_else(|| config_err(anyhow!("provider llm needs an [llm] config section")))?;
            Box::new(LlmProvider::from_config(llm).map_err(config_err)?)
        }
        other => return Err(config_err(anyhow!("unknown provider `{other}`"))),
    };
    let defaults = CurateOptions::default();
    let opts = CurateOptions {
        jobs,
        attempt_factor: a.attempt_factor.or(cfg.gen.attempt_factor).unwrap_or(defaults.attempt_factor),
        tail_len: a.tail_len.or(cfg.gen.tail_len),
    };

    let mut report = CurationReport::default();
    let mut partial = false;
    for tier in a.tier.tiers() {
        match curate(tier, a.count, a.seed, provider.as_ref(), &a.out, &opts) {
            Ok(r) => report.merge(&r),
            Err(CurateError::Partial { report: r, accepted, requested }) => {
                eprintln!("warning: {tier}: attempt cap reached with {accepted} of {requested} accepted");
                report.merge(&r);
                partial = true;
            }
            Err(e) => return Err(config_err(e)),
        }
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(if partial { EXIT_PARTIAL } else { 0 })
}

fn cmd_stats(dir: &Path, json: bool) -> CmdResult {
    let rows = dataset_stats(dir).map_err(usage)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&rows).expect("stats serialize"));
        return Ok(0);
    }
    let mut s = format!(
        "{:<8} {:>5} {:>9} {:>10} {:>11} {:>10} {:>9}\n",
        "tier", "count", "states", "avg_edges", "avg_phases", "avg_words", "avg_lines"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>9} {:>10.2} {:>11.2} {:>10.1} {:>9.1}",
            r.tier.as_str(),
            r.count,
            format!("{}-{}", r.min_states, r.max_states),
            r.mean_edges,
            r.mean_phases,
            r.mean_spec_words,
            r.mean_rtl_lines
        );
    }
    print!("{s}");
    Ok(0)
}

fn cmd_equiv(a: &Path, b: &Path, json: bool, max_depth: Option<usize>) -> CmdResult {
    let (fa, fb) = (read_fsm(a)?, read_fsm(b)?);
    let v = match check_equivalence(&fa, &fb, max_depth) {
        Ok(v) => v,
        Err(e @ (VerifyError::Interface(_) | VerifyError::Capacity(_))) => return Err(config_err(e)),
        Err(e) => return Err(usage(e)),
    };
    if json {
        println!("{}", serde_json::to_string(&v).expect("verdict serializes"));
    } else if v.equivalent {
        println!("equivalent");
    } else {
        let cex: Vec<String> = v.counterexample.iter().flatten().map(|x| x.to_string()).collect();
        println!(
            "not equivalent: output {} differs at cycle {}\ncounterexample: {}",
            v.mismatch_output.as_deref().unwrap_or("?"),
            v.mismatch_cycle.unwrap_or(0),
            cex.join(" ")
        );
    }
    Ok(if v.equivalent { 0 } else { EXIT_NEGATIVE })
}

fn cmd_iso(graph: &Path, fsm: &Path, mapping: &Path) -> CmdResult {
    let g = graph_from_json(&read(graph)?).map_err(|e| usage(anyhow!("{}: {e}", graph.display())))?;
    let f = read_fsm(fsm)?;
    let m: StateMapping =
        serde_json::from_str(&read(mapping)?).map_err(|e| usage(anyhow!("{}: {e}", mapping.display())))?;
    let r = check_isomorphism(&g, &f, &m).map_err(config_err)?;
    println!("{}", serde_json::to_string(&r).expect("result serializes"));
    Ok(if r.isomorphic { 0 } else { EXIT_NEGATIVE })
}

fn cmd_eval(a: EvalArgs, cfg: &Config, jobs: usize) -> CmdResult {
    let pipeline = match a.pipeline {
        PipelineArg::Rtl => Pipeline::Rtl,
        PipelineArg::Yaml => Pipeline::Yaml,
    };
    let mut opts = EvalOptions::new(pipeline);
    opts.jobs = jobs;
    if let Some(n) = a.sim_jobs.or(cfg.eval.sim_jobs) {
        opts.sim_jobs = n;
    }
    if let Some(cmd) = a.sim_cmd.or_else(|| cfg.eval.sim_cmd.clone()) {
        let mut sim = SimConfig::new(cmd);
        if let Some(t) = a.timeout.or(cfg.eval.timeout_secs) {
            sim.timeout = Duration::from_secs(t);
        }
        opts.sim = Some(sim);
    }
    let report = match evaluate_run(&a.dataset, &a.candidates, &opts) {
        Ok(r) => r,
        Err(e @ (EvalError::SimulatorMissing(_) | EvalError::Config(_))) => return Err(config_err(e)),
        Err(e) => return Err(usage(e)),
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_out(a.out.as_deref(), &text)?;
    let t = &report.totals;
    eprintln!(
        "{} problems evaluated, {} missing, {}/{} samples passed",
        t.evaluated, t.missing, t.passed, t.samples
    );
    Ok(if report.all_passed() { 0 } else { EXIT_NEGATIVE })
}
