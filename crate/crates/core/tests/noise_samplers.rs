use std::sync::Arc;

use qsdlab::noise::{
    noise_statistics, sample_mode_sum_ensemble, sample_mode_sum_path, sample_ou_ensemble,
    z_score, CorrelationSpec, ModeSumSpec, StatReport,
};
use qsdlab::numerics::{TimeGrid, C64, ZERO};

fn unit() -> CorrelationSpec {
    CorrelationSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap()
}

fn worst_z<F: Fn(usize, usize) -> C64>(r: &StatReport, target: F) -> f64 {
    let mut z = 0.0f64;
    for a in 0..r.len() {
        for b in 0..r.len() {
            z = z.max(z_score(r.cov(a, b), target(a, b), r.cov_se(a, b)));
            z = z.max(z_score(r.pseudo(a, b), ZERO, r.pseudo_se(a, b)));
        }
    }
    z
}

#[test]
fn mode_sum_path_is_shift_consistent() {
    let spec = Arc::new(ModeSumSpec::lorentzian_default(&unit()));
    let grid = TimeGrid::new(0.3, 0.01, 2000).unwrap();
    let path = sample_mode_sum_path(&spec, &grid, 8).unwrap();
    // the path is a finite sum of harmonics, so its samples obey the exact
    // shift relation with the same seed started at a later origin
    let shifted = sample_mode_sum_path(&spec, &TimeGrid::new(5.3, 0.01, 1000).unwrap(), 8).unwrap();
    for j in 0..shifted.samples.len() {
        assert!((shifted.samples[j] - path.samples[j + 1000]).norm() < 1e-11, "sample {j}");
    }
}

#[test]
fn mode_sum_reproduces_its_own_correlation() {
    let spec = unit();
    let modes = Arc::new(ModeSumSpec::lorentzian_default(&spec));
    let grid = TimeGrid::span(3.0, 0.5).unwrap();
    let r = noise_statistics(&sample_mode_sum_ensemble(&modes, &grid, 21, 20_000).unwrap()).unwrap();
    let z = worst_z(&r, |a, b| modes.correlation(r.times[b] - r.times[a]));
    assert!(z < 5.0, "worst z {z}");
}

#[test]
fn default_mode_sum_agrees_with_ar1_over_three_memory_times() {
    // The 512-mode default undershoots alpha(0) by 0.016, about one
    // standard error of the difference at this size.
    let spec = unit();
    let modes = Arc::new(ModeSumSpec::lorentzian_default(&spec));
    let grid = TimeGrid::span(3.0, 0.5).unwrap();
    let ms = noise_statistics(&sample_mode_sum_ensemble(&modes, &grid, 31, 2000).unwrap()).unwrap();
    let ar = noise_statistics(&sample_ou_ensemble(&spec, &grid, 32, 2000).unwrap()).unwrap();
    let mut z = 0.0f64;
    for a in 0..ms.len() {
        for b in 0..ms.len() {
            let (sa, sb) = (ms.cov_se(a, b), ar.cov_se(a, b));
            let se = ((sa.0 * sa.0 + sb.0 * sb.0).sqrt(), (sa.1 * sa.1 + sb.1 * sb.1).sqrt());
            z = z.max(z_score(ms.cov(a, b), ar.cov(a, b), se));
        }
    }
    assert!(z < 5.0, "worst z {z}");
}

#[test]
fn wider_window_removes_the_truncation_bias() {
    let spec = unit();
    let default = ModeSumSpec::lorentzian_default(&spec).residual(&spec, 3.0, 600);
    let wide = ModeSumSpec::lorentzian(&spec, 4096, 200.0).unwrap().residual(&spec, 3.0, 600);
    // tail weight outside +-W gamma is 1 - (2/pi) atan(W)
    assert!(wide < 0.002, "{wide}");
    assert!(default > 8.0 * wide);
}

#[test]
fn ou_moments_on_a_fine_grid() {
    let spec = CorrelationSpec::ornstein_uhlenbeck(2.0, 0.5).unwrap();
    let grid = TimeGrid::span(1.0, 0.25).unwrap();
    let r = noise_statistics(&sample_ou_ensemble(&spec, &grid, 77, 30_000).unwrap()).unwrap();
    let z = worst_z(&r, |a, b| C64::from(spec.alpha(r.times[a], r.times[b])));
    assert!(z < 5.0, "worst z {z}");
    for a in 0..r.len() {
        assert!(z_score(r.mean[a], ZERO, r.mean_se[a]) < 5.0);
    }
}
