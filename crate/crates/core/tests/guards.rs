use fsmbench_core::guard::{parse_guard, print_guard, solve_priority, Guard, InputValuation};
use fsmbench_core::model::{StateDef, Transition};
use fsmbench_testkit::{env, priority_pick, random_guard, rng, truth, truth_table, var_names};
use proptest::prelude::*;
use rand::Rng;

fn arb_guard(vars: Vec<String>) -> impl Strategy<Value = Guard> {
    let leaf = prop_oneof![
        1 => any::<bool>().prop_map(Guard::Const),
        6 => proptest::sample::select(vars).prop_map(Guard::Var),
    ];
    leaf.prop_recursive(5, 48, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|g| Guard::Not(Box::new(g))),
            proptest::collection::vec(inner.clone(), 2..=3).prop_map(Guard::And),
            proptest::collection::vec(inner, 2..=3).prop_map(Guard::Or),
        ]
    })
}

proptest! {
    #[test]
    fn print_parse_preserves_truth(g in arb_guard(var_names(6))) {
        let vars = var_names(6);
        let text = print_guard(&g);
        let back = parse_guard(&text).unwrap();
        prop_assert_eq!(truth_table(&back, &vars), truth_table(&g, &vars));
        prop_assert_eq!(print_guard(&parse_guard(&print_guard(&back)).unwrap()), print_guard(&back));
    }

    #[test]
    fn library_eval_matches_oracle(g in arb_guard(var_names(4)), idx in 0u64..16) {
        let vars = var_names(4);
        let v = InputValuation::from_index(&vars, idx);
        prop_assert_eq!(g.eval(&v).unwrap(), truth(&g, &env(&vars, idx)));
        prop_assert_eq!(g.compile(&vars).unwrap().eval(idx), truth(&g, &env(&vars, idx)));
    }

    #[test]
    fn parser_never_panics(s in "[a-z01()!&| ]{0,24}") {
        let _ = parse_guard(&s);
    }
}

#[test]
fn random_guards_reach_depth_six() {
    let vars = var_names(6);
    let mut r = rng(11);
    let deepest = (0..500).map(|_| random_guard(&mut r, &vars, 6).depth()).max().unwrap();
    assert_eq!(deepest, 6);
}

#[test]
fn whitespace_and_redundant_parens_are_accepted() {
    let g = parse_guard(" ( (in0) &!in1 ) |  1 ").unwrap();
    let vars = var_names(2);
    assert!(truth_table(&g, &vars).iter().all(|&b| b));
    assert!(parse_guard("in0 &").is_err());
    assert!(parse_guard("").is_err());
}

#[test]
fn solve_priority_is_lowest_exclusive_witness() {
    let mut r = rng(5);
    for _ in 0..300 {
        let n_in = r.random_range(0..=4);
        let vars = var_names(n_in);
        let s = StateDef {
            name: "S".into(),
            outputs: Default::default(),
            transitions: (0..r.random_range(1..=4))
                .map(|_| Transition { guard: random_guard(&mut r, &vars, 3), next: "S".into() })
                .collect(),
        };
        for i in 0..s.transitions.len() {
            let expect = (0..1u64 << n_in).find(|&v| priority_pick(&s, &vars, v) == Some(i));
            let got = solve_priority(&s, i, &vars).unwrap().map(|v| v.index_for(&vars).unwrap());
            assert_eq!(got, expect);
        }
        assert!(solve_priority(&s, s.transitions.len(), &vars).is_err());
    }
}
