use qsdlab::ensemble::{convergence_report, run_ensemble, random_mixed_state};
use qsdlab::models::ModelSpec;
use qsdlab::noise::CorrelationSpec;
use qsdlab::numerics::{ComplexMatrix, TimeGrid, ONE, ZERO};
use qsdlab::qsd::Method;

#[test]
fn ensemble_deviation_shrinks_like_inverse_sqrt_n() {
    let corr = CorrelationSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap();
    let model = ModelSpec::make_rwa_qubit(1.0, corr).unwrap();
    let grid = TimeGrid::span(5.0, 1e-2).unwrap();
    let rho0 = ComplexMatrix::diagonal(&[ONE, ZERO]);
    let run = |n| run_ensemble(&model, &rho0, n, 2718, &grid, Method::Numeric).unwrap();
    let (r250, r500, r1000, r2000) = (run(250), run(500), run(1000), run(2000));
    let coarse = convergence_report(&r250, &r500).unwrap();
    let fine = convergence_report(&r1000, &r2000).unwrap();
    let ratio = coarse.max_deviation / fine.max_deviation;
    // 1/sqrt(n) predicts 2
    assert!(ratio > 2.0 / 3.0 && ratio < 6.0, "ratio {ratio}");
    assert_eq!(fine.n_small, 1000);
    assert!((fine.expected_scale - 1.0 / 1000f64.sqrt()).abs() < 1e-15);
}

#[test]
fn convergence_report_needs_nested_seeds() {
    let corr = CorrelationSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap();
    let model = ModelSpec::make_rwa_qubit(1.0, corr).unwrap();
    let grid = TimeGrid::span(1.0, 1e-2).unwrap();
    let rho0 = random_mixed_state(2, 9);
    let a = run_ensemble(&model, &rho0, 10, 1, &grid, Method::Numeric).unwrap();
    let b = run_ensemble(&model, &rho0, 20, 2, &grid, Method::Numeric).unwrap();
    assert!(convergence_report(&a, &b).is_err());
    let other = TimeGrid::span(1.0, 2e-2).unwrap();
    let c = run_ensemble(&model, &rho0, 20, 1, &other, Method::Numeric).unwrap();
    assert!(convergence_report(&a, &c).is_err());
}

#[test]
fn mixed_three_level_ensemble_is_a_density_matrix() {
    let corr = CorrelationSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap();
    let model = ModelSpec::make_three_level(1.0, corr).unwrap();
    let grid = TimeGrid::span(2.0, 1e-2).unwrap();
    let rho0 = random_mixed_state(3, 5);
    let res = run_ensemble(&model, &rho0, 400, 8, &grid, Method::Numeric).unwrap();
    assert!(res.max_hermiticity_defect() <= 1e-12);
    assert!(res.min_eigenvalue() >= -1e-10);
    assert!(res.max_trace_error() < 6.0 / 400f64.sqrt());
    assert!(res.purity.iter().all(|p| *p > 1.0 / 3.0 - 1e-12 && *p <= 1.0 + 1e-12));
}
