mod common;

use common::gradients::{full_suite, Check};

fn assert_all(checks: &[Check]) {
    let failures: Vec<String> = checks
        .iter()
        .filter(|(_, err, tol)| err.is_nan() || err >= tol)
        .map(|(name, err, tol)| format!("{name}: {err:e} >= {tol:e}"))
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn every_layer_and_model_matches_finite_differences() {
    let checks = full_suite(2024);
    assert!(checks.len() > 30);
    assert_all(&checks);
}

#[test]
fn gradient_suite_holds_for_other_seeds() {
    for seed in [1, 99] {
        assert_all(&full_suite(seed));
    }
}
