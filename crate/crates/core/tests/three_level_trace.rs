//! Trace preservation `M[<psi|psi>] = 1` as an oracle for the three-level
//! `Obar` coefficients. The cross-method check cannot see errors in `Obar`
//! because the closed form and the integrator share it; the ensemble trace
//! can.

use qsdlab::ensemble::run_ensemble;
use qsdlab::models::{ModelSpec, ThreeLevelClosure};
use qsdlab::noise::CorrelationSpec;
use qsdlab::numerics::{ComplexMatrix, TimeGrid, ONE, ZERO};
use qsdlab::qsd::Method;

/// Largest `|Tr rho - 1| / se` over nodes with a nonzero standard error.
fn trace_z(closure: ThreeLevelClosure) -> f64 {
    let corr = CorrelationSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap();
    let model = ModelSpec::make_three_level(1.0, corr).unwrap().with_closure(closure);
    let grid = TimeGrid::span(3.0, 1e-2).unwrap();
    let rho0 = ComplexMatrix::diagonal(&[ZERO, ZERO, ONE]);
    let res = run_ensemble(&model, &rho0, 48_000, 3, &grid, Method::Numeric).unwrap();
    res.trace
        .iter()
        .zip(&res.trace_stderr)
        .map(|(t, &se)| {
            let d = (t - 1.0).norm();
            if d < 1e-12 {
                0.0
            } else {
                d / se
            }
        })
        .fold(0.0, f64::max)
}

#[test]
fn auxiliary_closure_preserves_trace_and_truncation_does_not() {
    let good = trace_z(ThreeLevelClosure::Auxiliary);
    let truncated = trace_z(ThreeLevelClosure::Truncated);
    assert!(good < 4.0, "trace drifts {good} standard errors with the full closure");
    assert!(truncated > 5.0, "truncated closure undetected ({truncated} standard errors)");
}
