//! The supporting invariants from `eqkf check`, one test each.

use eqkf_harness::checks::{self, Outcome};

fn assert_passes(o: Outcome) {
    assert!(o.passed, "{o}");
}

#[test]
fn feedback_does_not_increase_residuals() {
    assert_passes(checks::feedback_advantage());
}

#[test]
fn posterior_weight_minimizes_trace() {
    assert_passes(checks::dominance());
}

#[test]
fn projection_matches_dense_kkt() {
    assert_passes(checks::kkt_oracle());
}

#[test]
fn projectors_are_idempotent() {
    assert_passes(checks::idempotence());
}

#[test]
fn circle_projection_rarely_increases_violation() {
    assert_passes(checks::nonlinear_trials());
}

#[test]
fn bundled_runs_agree_within_classes_and_stay_psd() {
    assert_passes(checks::scenario_divergence());
}
