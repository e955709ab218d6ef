//! Phase-structured random topology sampler.
//!
//! Draw order for one graph (all from a single [`DetRng`] seeded with
//! `cfg.seed`):
//!
//! 1. for each phase in order: member count, then for each member in
//!    order a forward-branch coin (non-exit members; target drawn only on
//!    success), a back-edge coin (non-entry members; target drawn only on
//!    success) and a self-loop coin;
//! 2. for each inter-phase jump: source phase, then target phase among
//!    the remaining ones.
//!
//! The reset state has id 0; phase members are numbered consecutively
//! from 1 in phase order.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{AbstractGraph, ConfigError, Phase, StateId, Tier, TopoConfig};
use crate::rng::{derive_seed, DetRng};

#[derive(Debug, Error, PartialEq)]
pub enum TopoError {
    #[error("invalid topology config: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("state {state} needs out-degree {needed} but max_out_degree is {max}")]
    Infeasible { state: StateId, needed: usize, max: usize },
}

/// A sampled phase with its internal edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledPhase {
    pub phase: Phase,
    pub edges: BTreeSet<(StateId, StateId)>,
}

struct DegreeBudget<'a> {
    edges: &'a mut BTreeSet<(StateId, StateId)>,
    max: usize,
}

impl DegreeBudget<'_> {
    /// Adds `u -> v` unless it already exists or `u` is at capacity.
    /// `reserved` counts slots held back for edges added later.
    fn try_add(&mut self, u: StateId, v: StateId, reserved: usize) -> bool {
        if self.edges.contains(&(u, v)) {
            return false;
        }
        let deg = self.edges.range((u, 0)..=(u, StateId::MAX)).count();
        if deg + reserved + 1 > self.max {
            return false;
        }
        self.edges.insert((u, v));
        true
    }
}

pub fn sample_phase(cfg: &TopoConfig, rng: &mut DetRng, id_base: StateId) -> SampledPhase {
    let (lo, hi) = cfg.states_per_phase;
    let size = rng.range_inclusive(lo as u64, hi as u64) as usize;
    let members: Vec<StateId> = (0..size as StateId).map(|i| id_base + i).collect();
    let last = size - 1;

    let mut edges = BTreeSet::new();
    for w in members.windows(2) {
        edges.insert((w[0], w[1]));
    }
    let mut budget = DegreeBudget { edges: &mut edges, max: cfg.max_out_degree };
    let reserved = |i: usize| usize::from(i == last);

    for i in 0..size {
        if i < last && rng.chance(cfg.p_forward_branch) {
            let first = if i + 2 <= last { i + 2 } else { i + 1 };
            let j = rng.range_inclusive(first as u64, last as u64) as usize;
            budget.try_add(members[i], members[j], reserved(i));
        }
        if i > 0 && rng.chance(cfg.p_back_edge) {
            let j = rng.below(i as u64) as usize;
            budget.try_add(members[i], members[j], reserved(i));
        }
        if rng.chance(cfg.p_self_loop) {
            budget.try_add(members[i], members[i], reserved(i));
        }
    }

    SampledPhase {
        phase: Phase { entry: members[0], exit: members[last], members },
        edges,
    }
}

pub fn sample_graph(cfg: &TopoConfig) -> Result<AbstractGraph, TopoError> {
    cfg.validate()?;
    let mut rng = DetRng::new(cfg.seed);
    let reset: StateId = 0;
    let mut next_id: StateId = 1;
    let mut phases = Vec::with_capacity(cfg.num_phases);
    let mut edges = BTreeSet::new();

    for _ in 0..cfg.num_phases {
        let sampled = sample_phase(cfg, &mut rng, next_id);
        next_id += sampled.phase.members.len() as StateId;
        edges.extend(sampled.edges);
        phases.push(sampled.phase);
    }

    edges.insert((reset, phases[0].entry));
    let k = phases.len();
    for i in 0..k {
        edges.insert((phases[i].exit, phases[(i + 1) % k].entry));
    }

    if k >= 2 {
        let mut budget = DegreeBudget { edges: &mut edges, max: cfg.max_out_degree };
        for _ in 0..cfg.num_inter_phase_jumps {
            let src = rng.below(k as u64) as usize;
            let mut dst = rng.below(k as u64 - 1) as usize;
            if dst >= src {
                dst += 1;
            }
            budget.try_add(phases[src].exit, phases[dst].entry, 0);
        }
    }

    let states: Vec<StateId> = (0..next_id).collect();
    let graph = AbstractGraph { states, reset_state: reset, phases, edges };
    for &s in &graph.states {
        let needed = graph.out_degree(s);
        if needed > cfg.max_out_degree {
            return Err(TopoError::Infeasible { state: s, needed, max: cfg.max_out_degree });
        }
    }
    debug_assert_eq!(graph.check(), Ok(()));
    Ok(graph)
}

/// Per-tier sampling constants.
///
/// Phase counts are drawn uniformly from `phase_choices`; the per-phase
/// member range is then derived so that `1 + phases * members` always lands
/// inside the tier's state bounds. Probabilities and jump counts were tuned
/// so population means of phases and edges track the published per-tier
/// averages (Low 2.71 / 11.95, Medium 5.24 / 32.17, High 8.83 / 65.39).
struct Preset {
    phase_choices: &'static [usize],
    p_forward_branch: f64,
    p_back_edge: f64,
    p_self_loop: f64,
    max_out_degree: usize,
    jumps: usize,
}

fn preset(tier: Tier) -> Preset {
    match tier {
        Tier::Low => Preset {
            phase_choices: &[2, 3, 3],
            p_forward_branch: 0.12,
            p_back_edge: 0.12,
            p_self_loop: 0.12,
            max_out_degree: 3,
            jumps: 1,
        },
        Tier::Medium => Preset {
            phase_choices: &[4, 5, 6],
            p_forward_branch: 0.25,
            p_back_edge: 0.2,
            p_self_loop: 0.15,
            max_out_degree: 4,
            jumps: 2,
        },
        Tier::High => Preset {
            phase_choices: &[7, 8, 9, 10, 11],
            p_forward_branch: 0.25,
            p_back_edge: 0.2,
            p_self_loop: 0.1,
            max_out_degree: 4,
            jumps: 3,
        },
    }
}

const PRESET_STREAM: u64 = 0x7072_6573_6574;

pub fn preset_config(tier: Tier, seed: u64) -> TopoConfig {
    let p = preset(tier);
    let mut rng = DetRng::new(derive_seed(seed, PRESET_STREAM));
    let num_phases = *rng.pick(p.phase_choices);
    let (min_states, max_states) = tier.bounds();
    // non-reset states must fit in [min_states - 1, max_states - 1]
    let lo = (min_states - 1).div_ceil(num_phases).max(2);
    let hi = (max_states - 1) / num_phases;
    debug_assert!(lo <= hi, "{tier:?} with {num_phases} phases has no member range");
    TopoConfig {
        num_phases,
        states_per_phase: (lo, hi),
        p_forward_branch: p.p_forward_branch,
        p_back_edge: p.p_back_edge,
        p_self_loop: p.p_self_loop,
        max_out_degree: p.max_out_degree,
        num_inter_phase_jumps: p.jumps,
        seed,
    }
}

pub fn graph_to_json(g: &AbstractGraph) -> String {
    serde_json::to_string(g).expect("graph serializes")
}

pub fn graph_from_json(text: &str) -> Result<AbstractGraph, serde_json::Error> {
    serde_json::from_str(text)
}
