mod common;

use adveval::analysis::kendall_tau;
use common::oracles::*;

#[test]
fn statistics_match_brute_force() {
    let worst = oracle_max_errors(10);
    for (name, e) in [
        "kendall_tau",
        "pearson",
        "auc",
        "monotonicity",
        "smoothness",
    ]
    .iter()
    .zip(worst)
    {
        assert!(e <= TOL, "{name}: max error {e:e}");
    }
}

#[test]
fn oracle_fixed_points() {
    assert_eq!(
        kendall_oracle(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
        Some(1.0)
    );
    assert_eq!(
        kendall_oracle(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]),
        Some(-1.0)
    );
    // One concordant pair out of two untied pairs on each side.
    let t = kendall_oracle(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
    assert!((t - 0.5).abs() < 1e-15);
    assert_eq!(kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), t);
    assert_eq!(auc_oracle(&[0.0, 1.0], &[0.0, 1.0]), 0.5);
    assert!((monotonicity_oracle(&[0.0, 0.0, 1.0, 0.5], true) - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(smoothness_oracle(&[0.0, 0.5, 1.0]), 0.0);
}
