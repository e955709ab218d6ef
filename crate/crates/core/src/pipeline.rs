//! End-to-end curation: sample → name → filter → synthesize → describe →
//! reconstruct → filter → persist.
//!
//! Attempt `i` of a run uses seed `base_seed + i` and nothing else, so the
//! accepted set (and every byte written) is independent of the worker
//! count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emit::{emit_rtl, emit_testbench, Encoding};
use crate::model::{validate_fsm, SemanticFsm, StateMapping, Tier};
use crate::semantics::{InterfaceSignature, Provenance, SemanticsProvider, SpecDocument};
use crate::sim::{run, Trace};
use crate::stimgen::{default_tail_len, infeasible_edges, plan};
use crate::topo::{preset_config, sample_graph};
use crate::verify::{check_equivalence, check_isomorphism};
use crate::yaml::{parse_fsm_yaml, serialize_fsm_yaml};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
/// Files written for every problem, in write order.
pub const PROBLEM_FILES: [&str; 6] =
    ["problem.yaml", "spec.md", "ref.sv", "tb.sv", "golden.csv", "meta.json"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemStats {
    pub n_states: usize,
    pub n_edges: usize,
    pub n_phases: usize,
    pub spec_words: usize,
    pub rtl_lines: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub iso: bool,
    pub equiv: bool,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemRecord {
    pub id: String,
    pub tier: Tier,
    pub seed: u64,
    pub fsm: SemanticFsm,
    pub mapping: StateMapping,
    pub spec: SpecDocument,
    pub golden: Trace,
    pub stats: ProblemStats,
    pub verdicts: Verdicts,
    pub provider: String,
    pub story: String,
    /// Stimulus-plan coverage sidecar.
    pub coverage: serde_json::Value,
    pub provenance: Provenance,
}

/// Why an attempt was dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discard {
    Sampling,
    Provider,
    InvalidFsm,
    Isomorphism,
    Infeasible,
    Reconstruction,
    Equivalence,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    pub attempted: usize,
    pub iso_passed: usize,
    pub feasible_passed: usize,
    pub equiv_passed: usize,
    pub accepted: usize,
    pub discards: BTreeMap<Discard, usize>,
}

impl TierCounts {
    fn add(&mut self, o: &TierCounts) {
        self.attempted += o.attempted;
        self.iso_passed += o.iso_passed;
        self.feasible_passed += o.feasible_passed;
        self.equiv_passed += o.equiv_passed;
        self.accepted += o.accepted;
        for (k, v) in &o.discards {
            *self.discards.entry(*k).or_default() += v;
        }
    }
}

/// Filter counters; `totals` is the sum of `tiers`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub totals: TierCounts,
    pub tiers: BTreeMap<Tier, TierCounts>,
}

impl CurationReport {
    pub fn merge(&mut self, other: &CurationReport) {
        self.totals.add(&other.totals);
        for (t, c) in &other.tiers {
            self.tiers.entry(*t).or_default().add(c);
        }
    }

    /// accepted ≤ equiv ≤ feasible ≤ iso ≤ attempted, per tier and overall.
    pub fn is_monotone(&self) -> bool {
        std::iter::once(&self.totals).chain(self.tiers.values()).all(|c| {
            c.accepted <= c.equiv_passed
                && c.equiv_passed <= c.feasible_passed
                && c.feasible_passed <= c.iso_passed
                && c.iso_passed <= c.attempted
        })
    }
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("problem `{0}` already exists")]
    Collision(String),
    #[error("corrupt dataset: {0}")]
    Integrity(String),
    #[error("cannot persist `{id}`: {reason}")]
    Rejected { id: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |e| PersistError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Error)]
pub enum CurateError {
    #[error("attempt cap reached with {accepted} of {requested} problems accepted")]
    Partial { report: CurationReport, accepted: usize, requested: usize },
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurateOptions {
    /// Worker threads; 0 means rayon's default.
    pub jobs: usize,
    /// Attempts allowed per requested problem.
    pub attempt_factor: usize,
    /// Random-tail length; `None` uses the stimulus default.
    pub tail_len: Option<usize>,
}

impl Default for CurateOptions {
    fn default() -> Self {
        CurateOptions { jobs: 0, attempt_factor: 4, tail_len: None }
    }
}

pub fn problem_id(tier: Tier, seed: u64) -> String {
    format!("{tier}_{seed:06}")
}

/// Progress of a single attempt through the filters.
#[derive(Debug)]
struct Attempt {
    iso: bool,
    feasible: bool,
    equiv: bool,
    outcome: Result<Box<ProblemRecord>, Discard>,
}

impl Attempt {
    fn discard(iso: bool, feasible: bool, why: Discard) -> Self {
        Attempt { iso, feasible, equiv: false, outcome: Err(why) }
    }
}

fn attempt(
    tier: Tier,
    seed: u64,
    provider: &dyn SemanticsProvider,
    tail_len: Option<usize>,
) -> Attempt {
    use Discard::*;
    let Ok(g) = sample_graph(&preset_config(tier, seed)) else {
        return Attempt::discard(false, false, Sampling);
    };
    if !tier.contains(g.states.len()) {
        return Attempt::discard(false, false, Sampling);
    }
    let mut log = Provenance::new();
    let Ok(assignment) = provider.assign_semantics(&g, seed, &mut log) else {
        return Attempt::discard(false, false, Provider);
    };
    let id = problem_id(tier, seed);
    let mut fsm = assignment.fsm;
    fsm.name = id.clone();
    if !validate_fsm(&fsm).is_empty() {
        return Attempt::discard(false, false, InvalidFsm);
    }
    match check_isomorphism(&g, &fsm, &assignment.mapping) {
        Ok(r) if r.isomorphic => {}
        _ => return Attempt::discard(false, false, Isomorphism),
    }
    if !matches!(infeasible_edges(&fsm), Ok(v) if v.is_empty()) {
        return Attempt::discard(true, false, Infeasible);
    }
    let tail = tail_len.unwrap_or_else(|| default_tail_len(&fsm));
    let Ok(stim) = plan(&fsm, seed, tail) else {
        return Attempt::discard(true, false, Infeasible);
    };
    if !stim.unreached.is_empty() {
        return Attempt::discard(true, false, Infeasible);
    }
    let (Ok(golden), Ok(coverage)) = (run(&fsm, &stim.valuations()), stim.coverage_sidecar(&fsm)) else {
        return Attempt::discard(true, false, Infeasible);
    };

    let Ok(spec) = provider.spec_from_fsm(&fsm, &mut log) else {
        return Attempt::discard(true, true, Provider);
    };
    let iface = InterfaceSignature::of(&fsm);
    let Ok(rebuilt) = provider.fsm_from_spec(&spec, &assignment.mapping, &iface, &mut log) else {
        return Attempt::discard(true, true, Reconstruction);
    };
    match check_equivalence(&fsm, &rebuilt, None) {
        Ok(v) if v.equivalent => {}
        _ => return Attempt::discard(true, true, Equivalence),
    }
    let Ok(rtl) = emit_rtl(&fsm, Encoding::OneHot) else {
        return Attempt::discard(true, true, InvalidFsm);
    };

    let stats = ProblemStats {
        n_states: fsm.states.len(),
        n_edges: fsm.explicit_edge_count(),
        n_phases: g.phases.len(),
        spec_words: spec.word_count,
        rtl_lines: rtl.lines().count(),
    };
    let rec = ProblemRecord {
        id,
        tier,
        seed,
        fsm,
        mapping: assignment.mapping,
        spec,
        golden,
        stats,
        verdicts: Verdicts { iso: true, equiv: true, feasible: true },
        provider: provider.name().to_string(),
        story: assignment.story,
        coverage,
        provenance: log,
    };
    Attempt { iso: true, feasible: true, equiv: true, outcome: Ok(Box::new(rec)) }
}

/// Curates `count` problems of `tier` into `out_dir`, trying seeds
/// `base_seed, base_seed + 1, ...` up to `attempt_factor × count` attempts.
pub fn curate(
    tier: Tier,
    count: usize,
    base_seed: u64,
    provider: &dyn SemanticsProvider,
    out_dir: &Path,
    opts: &CurateOptions,
) -> Result<CurationReport, CurateError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CurateError::Pool(e.to_string()))?;
    let cap = count.saturating_mul(opts.attempt_factor.max(1));
    let batch = pool.current_num_threads().max(1) * 2;

    let mut counts = TierCounts::default();
    let mut next = 0usize;
    while counts.accepted < count && next < cap {
        let end = (next + batch).min(cap);
        let results: Vec<Attempt> = pool.install(|| {
            (next..end)
                .into_par_iter()
                .map(|i| attempt(tier, base_seed.wrapping_add(i as u64), provider, opts.tail_len))
                .collect()
        });
        next = end;
        for a in results {
            if counts.accepted == count {
                break;
            }
            counts.attempted += 1;
            counts.iso_passed += a.iso as usize;
            counts.feasible_passed += a.feasible as usize;
            counts.equiv_passed += a.equiv as usize;
            match a.outcome {
                Ok(rec) => {
                    tracing::debug!(id = %rec.id, "accepted");
                    persist(&rec, out_dir)?;
                    counts.accepted += 1;
                }
                Err(why) => {
                    tracing::debug!(?why, "discarded");
                    *counts.discards.entry(why).or_default() += 1;
                }
            }
        }
    }

    let report = CurationReport { totals: counts.clone(), tiers: BTreeMap::from([(tier, counts)]) };
    if report.totals.accepted < count {
        return Err(CurateError::Partial { accepted: report.totals.accepted, requested: count, report });
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub tier: Tier,
    pub n_states: usize,
    pub n_edges: usize,
    pub n_phases: usize,
    pub spec_words: usize,
    pub rtl_lines: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub problems: Vec<ManifestEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest { version: MANIFEST_VERSION, problems: Vec::new() }
    }
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Manifest, PersistError> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| PersistError::Integrity(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(PersistError::Integrity(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    fn load_or_default(root: &Path) -> Result<Manifest, PersistError> {
        if root.join(MANIFEST).exists() {
            Manifest::load(root)
        } else {
            Ok(Manifest::default())
        }
    }

    /// Writes the manifest, sorted by (tier, seed, id).
    pub fn save(&mut self, root: &Path) -> Result<(), PersistError> {
        self.problems.sort_by(|a, b| (a.tier, a.seed, &a.id).cmp(&(b.tier, b.seed, &b.id)));
        let path = root.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(io_err(&path))
    }
}

pub fn problem_dir(root: &Path, tier: Tier, id: &str) -> PathBuf {
    root.join("problems").join(tier.as_str()).join(id)
}

/// Relative path of the provider log for `id`, when one is written.
pub fn provenance_path(id: &str) -> String {
    format!("provenance/{id}.jsonl")
}

#[derive(Serialize)]
struct Meta<'a> {
    id: &'a str,
    tier: Tier,
    seed: u64,
    provider: &'a str,
    stats: &'a ProblemStats,
    verdicts: Verdicts,
    mapping: &'a StateMapping,
    story: &'a str,
    provenance: Option<String>,
    coverage: &'a serde_json::Value,
}

/// Writes one problem directory and records it in the manifest.
pub fn persist(rec: &ProblemRecord, root: &Path) -> Result<PathBuf, PersistError> {
    let reject = |reason: String| PersistError::Rejected { id: rec.id.clone(), reason };
    let v = rec.verdicts;
    if !(v.iso && v.equiv && v.feasible) {
        return Err(reject("not every verdict passed".into()));
    }
    let mut manifest = Manifest::load_or_default(root)?;
    let dir = problem_dir(root, rec.tier, &rec.id);
    if dir.exists() || manifest.problems.iter().any(|p| p.id == rec.id) {
        return Err(PersistError::Collision(rec.id.clone()));
    }

    let yaml = serialize_fsm_yaml(&rec.fsm).map_err(|e| reject(e.to_string()))?;
    let rtl = emit_rtl(&rec.fsm, Encoding::OneHot).map_err(|e| reject(e.to_string()))?;
    let tb = emit_testbench(&rec.fsm, &rec.golden).map_err(|e| reject(e.to_string()))?;
    let provenance = (!rec.provenance.is_empty()).then(|| provenance_path(&rec.id));
    let meta = Meta {
        id: &rec.id,
        tier: rec.tier,
        seed: rec.seed,
        provider: &rec.provider,
        stats: &rec.stats,
        verdicts: rec.verdicts,
        mapping: &rec.mapping,
        story: &rec.story,
        provenance: provenance.clone(),
        coverage: &rec.coverage,
    };
    let meta = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    let contents = [yaml, rec.spec.to_markdown(), rtl, tb, rec.golden.to_csv(), meta];

    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (name, text) in PROBLEM_FILES.iter().zip(&contents) {
        let p = dir.join(name);
        fs::write(&p, text).map_err(io_err(&p))?;
    }
    if let Some(rel) = provenance {
        let p = root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let lines: String = rec
            .provenance
            .iter()
            .map(|e| serde_json::to_string(e).expect("exchange serializes") + "\n")
            .collect();
        fs::write(&p, lines).map_err(io_err(&p))?;
    }

    manifest.problems.push(ManifestEntry {
        id: rec.id.clone(),
        tier: rec.tier,
        n_states: rec.stats.n_states,
        n_edges: rec.stats.n_edges,
        n_phases: rec.stats.n_phases,
        spec_words: rec.stats.spec_words,
        rtl_lines: rec.stats.rtl_lines,
        seed: rec.seed,
    });
    manifest.save(root)?;
    Ok(dir)
}

/// A persisted problem read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredProblem {
    pub id: String,
    pub tier: Tier,
    pub dir: PathBuf,
    pub fsm: SemanticFsm,
    pub spec_markdown: String,
    pub golden: Trace,
    pub meta: serde_json::Value,
}

impl StoredProblem {
    pub fn read_file(&self, name: &str) -> Result<String, PersistError> {
        let p = self.dir.join(name);
        fs::read_to_string(&p).map_err(io_err(&p))
    }
}

pub fn load_problem(root: &Path, entry: &ManifestEntry) -> Result<StoredProblem, PersistError> {
    let dir = problem_dir(root, entry.tier, &entry.id);
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(io_err(&p))
    };
    let integrity = |what: &str, e: String| PersistError::Integrity(format!("{}/{what}: {e}", entry.id));
    let fsm = parse_fsm_yaml(&read("problem.yaml")?).map_err(|e| integrity("problem.yaml", e.to_string()))?;
    let golden = Trace::from_csv(&read("golden.csv")?, &fsm).map_err(|e| integrity("golden.csv", e.to_string()))?;
    let meta = serde_json::from_str(&read("meta.json")?).map_err(|e| integrity("meta.json", e.to_string()))?;
    Ok(StoredProblem {
        id: entry.id.clone(),
        tier: entry.tier,
        spec_markdown: read("spec.md")?,
        dir,
        fsm,
        golden,
        meta,
    })
}

/// One row of the dataset summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub tier: Tier,
    pub count: usize,
    pub min_states: usize,
    pub max_states: usize,
    pub mean_edges: f64,
    pub mean_phases: f64,
    pub mean_spec_words: f64,
    pub mean_rtl_lines: f64,
}

pub fn dataset_stats(root: &Path) -> Result<Vec<TierStats>, PersistError> {
    let m = Manifest::load(root)?;
    let mut rows = Vec::new();
    for tier in Tier::ALL {
        let ps: Vec<&ManifestEntry> = m.problems.iter().filter(|p| p.tier == tier).collect();
        if ps.is_empty() {
            continue;
        }
        let n = ps.len() as f64;
        let mean = |f: fn(&ManifestEntry) -> usize| ps.iter().map(|p| f(p) as f64).sum::<f64>() / n;
        rows.push(TierStats {
            tier,
            count: ps.len(),
            min_states: ps.iter().map(|p| p.n_states).min().unwrap_or(0),
            max_states: ps.iter().map(|p| p.n_states).max().unwrap_or(0),
            mean_edges: mean(|p| p.n_edges),
            mean_phases: mean(|p| p.n_phases),
            mean_spec_words: mean(|p| p.spec_words),
            mean_rtl_lines: mean(|p| p.rtl_lines),
        });
    }
    Ok(rows)
}
