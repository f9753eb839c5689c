mod common;

#[test]
fn ilqg_gains_match_riccati_on_random_lqr() {
    let err = common::riccati_max_rel_err(20, 11);
    assert!(err <= 1e-6, "relative gain error {err:e}");
}

#[test]
fn embedded_jacobians_match_central_differences() {
    let err = common::jacobian_max_rel_err(100, 5);
    assert!(err <= 1e-5, "relative Jacobian error {err:e}");
}
