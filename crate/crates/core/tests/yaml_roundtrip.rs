use fsmbench_core::model::validate_fsm;
use fsmbench_core::yaml::{parse_fsm_yaml, serialize_fsm_yaml, SchemaCode};
use fsmbench_testkit::{random_fsm, rng, truth_table};
use rand::Rng;

#[test]
fn random_machines_round_trip() {
    let mut r = rng(21);
    for _ in 0..300 {
        let (n, i, o) = (r.random_range(1..=8), r.random_range(0..=4), r.random_range(0..=3));
        let f = random_fsm(&mut r, n, i, o);
        assert!(validate_fsm(&f).is_empty());
        let text = serialize_fsm_yaml(&f).unwrap();
        let back = parse_fsm_yaml(&text).unwrap();
        assert_eq!(back.states.len(), f.states.len());
        for (x, y) in f.states.iter().zip(&back.states) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.outputs, y.outputs);
            assert_eq!(x.transitions.len(), y.transitions.len());
            for (p, q) in x.transitions.iter().zip(&y.transitions) {
                assert_eq!(p.next, q.next);
                assert_eq!(truth_table(&p.guard, &f.inputs), truth_table(&q.guard, &f.inputs));
            }
        }
        assert_eq!(serialize_fsm_yaml(&back).unwrap(), text, "serializer is a fixpoint");
    }
}

#[test]
fn schema_errors_carry_codes() {
    let base = "name: m\nreset: {signal: rst, state: A}\ninputs: [a]\noutputs: {y: 1}\nstates:\n  A: {outputs: {y: 0}, transitions: []}\n";
    assert!(parse_fsm_yaml(base).is_ok());
    let bad = base.replace("name: m\n", "name: m\nflavor: x\n");
    assert!(parse_fsm_yaml(&bad).unwrap_err().schema_code().is_some());
    let async_reset = base.replace("state: A}", "state: A, kind: asynchronous}");
    assert_eq!(parse_fsm_yaml(&async_reset).unwrap_err().schema_code(), Some(SchemaCode::UnsupportedValue));
}
