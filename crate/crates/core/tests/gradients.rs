mod common;

use common::{check_model, op_cases, run_op, MODEL_TOL, OP_TOL};
use titlegen::models::Architecture;

#[test]
fn every_op_matches_central_differences() {
    let mut failures = Vec::new();
    for (name, make) in op_cases() {
        let err = run_op(make, name);
        if !(err < OP_TOL) {
            failures.push(format!("{name}: {err:e}"));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn rnn_end_to_end() {
    for seed in 0..2 {
        let r = check_model(Architecture::Rnn, seed);
        assert!(r.relative_error < MODEL_TOL, "{r:?}");
    }
}

#[test]
fn transformer_end_to_end() {
    for seed in 0..2 {
        let r = check_model(Architecture::Transformer, seed);
        assert!(r.relative_error < MODEL_TOL, "{r:?}");
    }
}
