use fsmbench_core::guard::InputValuation;
use fsmbench_core::model::Tier;
use fsmbench_core::semantics::mock::mock_assign_semantics;
use fsmbench_core::topo::{preset_config, sample_graph};
use fsmbench_core::verify::{check_equivalence, check_equivalence_with_stats, replay_counterexample, VerifyError};
use fsmbench_testkit::{
    brute_force_divergence, enumerate_divergence, output_mutated, random_fsm_in, renamed, rng, transition_mutated, Interp,
};

#[test]
fn verdicts_agree_with_exhaustive_simulation() {
    let mut r = rng(3);
    let mut negatives = 0;
    for k in 0..400 {
        let a = random_fsm_in(&mut r, 1..=4, 0..=2, 1..=2);
        let b = match k % 4 {
            0 => a.clone(),
            1 => renamed(&a),
            2 => output_mutated(&mut r, &a),
            _ => transition_mutated(&mut r, &a),
        };
        let v = check_equivalence(&a, &b, None).unwrap();
        let oracle = brute_force_divergence(&a, &b);
        assert_eq!(v.equivalent, oracle.is_none(), "pair {k}");
        assert_eq!(v.mismatch_cycle, oracle, "pair {k}");
        if let Some(cycle) = oracle {
            negatives += 1;
            let cex = v.counterexample.unwrap();
            assert_eq!(cex.len(), cycle);
            let diffs = replay_counterexample(&a, &b, &cex).unwrap();
            assert!(diffs.iter().all(|d| d.cycle == cycle) && !diffs.is_empty());
            assert!(diffs.iter().any(|d| Some(&d.output) == v.mismatch_output.as_ref()));
        }
    }
    assert!(negatives > 50);
}

#[test]
fn literal_enumeration_agrees_on_tiny_machines() {
    let mut r = rng(4);
    for _ in 0..120 {
        let a = random_fsm_in(&mut r, 1..=2, 0..=2, 1..=1);
        let b = output_mutated(&mut r, &a);
        let b = transition_mutated(&mut r, &b);
        let bound = a.states.len() * b.states.len();
        assert_eq!(enumerate_divergence(&a, &b, bound), brute_force_divergence(&a, &b));
    }
}

#[test]
fn counterexample_reproduces_under_oracle() {
    let mut r = rng(8);
    for _ in 0..100 {
        let a = random_fsm_in(&mut r, 4..=4, 2..=2, 2..=2);
        let b = transition_mutated(&mut r, &a);
        let v = check_equivalence(&a, &b, None).unwrap();
        let Some(cex) = v.counterexample else { continue };
        let idx: Vec<u64> = cex.iter().map(|x| x.index_for(&a.inputs).unwrap()).collect();
        let (ia, ib) = (Interp::new(&a), Interp::new(&b));
        let (mut x, mut y) = (ia.reset(), ib.reset());
        for &i in &idx {
            x = ia.next(x, i);
            y = ib.next(y, i);
        }
        assert_ne!(ia.outputs(x), ib.outputs(y));
    }
}

#[test]
fn depth_bound_reports_incomplete_search() {
    let mut r = rng(9);
    let a = random_fsm_in(&mut r, 4..=4, 1..=1, 1..=1);
    let (v, stats) = check_equivalence_with_stats(&a, &a, Some(0)).unwrap();
    assert!(v.equivalent);
    assert!(!stats.complete || a.states.len() == 1);
}

#[test]
fn interface_mismatch_is_an_error() {
    let mut r = rng(10);
    let a = random_fsm_in(&mut r, 3..=3, 2..=2, 1..=1);
    let mut b = a.clone();
    b.inputs.push("extra".into());
    assert!(matches!(check_equivalence(&a, &b, None), Err(VerifyError::Interface(_))));
    let mut c = a.clone();
    c.inputs.reverse();
    // input order is not part of the interface
    assert!(check_equivalence(&a, &c, None).is_ok());
}

#[test]
fn largest_high_tier_machine_checks_quickly() {
    let g = (0..200)
        .map(|s| sample_graph(&preset_config(Tier::High, s)).unwrap())
        .max_by_key(|g| g.states.len())
        .unwrap();
    let f = mock_assign_semantics(&g, 1).fsm;
    assert!(f.inputs.len() <= 6);
    let t = std::time::Instant::now();
    let (v, _) = check_equivalence_with_stats(&f, &f, None).unwrap();
    assert!(v.equivalent);
    assert!(t.elapsed().as_secs_f64() < 5.0);
    let unused = InputValuation::from_index(&f.inputs, 0);
    assert_eq!(unused.entries().len(), f.inputs.len());
}
