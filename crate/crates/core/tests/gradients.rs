mod common;

use common::*;

const TOL: f64 = 1e-4;

fn check(cases: impl IntoIterator<Item = CaseResult>) {
    for c in cases {
        assert!(c.max_error < TOL, "{} (seed {}): relative error {:e}", c.name, c.seed, c.max_error);
    }
}

#[test]
fn tape_ops_match_central_differences() {
    for op in 0..OPS.len() {
        check((0..3).map(|s| op_case(op, 7 + s + 100 * op as u64)));
    }
}

#[test]
fn pretraining_loss_gradient() {
    check((0..4).map(|s| pretrain_case(900 + s)));
}

#[test]
fn span_loss_gradient() {
    check((0..4).map(|s| qa_case(900 + s)));
}

#[test]
fn adapter_loss_gradient() {
    check((0..4).map(|s| lora_case(900 + s)));
}

#[test]
fn error_metric_floors_tiny_values() {
    assert_eq!(rel_err(1.0, 1.0), 0.0);
    assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    assert!(rel_err(1e-12, -1e-12) < 1e-5);
}
