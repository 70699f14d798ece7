//! Fixed-step classical RK4 on the half-step grid.
//!
//! Stage evaluations use the samples at `t_k`, `t_k + dt/2` (twice) and
//! `t_k + dt`, i.e. half indices `2k`, `2k + 1`, `2k + 2`, so time-dependent
//! data such as noise paths is read directly from its samples. Midpoint
//! states are filled in with the third-order continuous extension built
//! from the same four stages.

use super::grid::TimeGrid;
use super::matrix::{C64, ZERO};
use super::series::StateSeries;
use crate::error::{QsdError, Result};

/// Position handed to a right-hand side: half-grid index and its time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub t: f64,
}

// continuous-extension weights at theta = 1/2
const DENSE_HALF: [f64; 4] = [5.0 / 24.0, 1.0 / 6.0, 1.0 / 6.0, -1.0 / 24.0];

/// Integrates `y' = f(t, y)` and returns `y` at every half-grid sample.
///
/// `deriv(sample, y, out)` writes `f(t, y)` into `out`.
pub fn rk4_integrate<F>(grid: &TimeGrid, y0: &[C64], deriv: F) -> Result<StateSeries>
where
    F: FnMut(Sample, &[C64], &mut [C64]),
{
    rk4_integrate_guarded(grid, y0, f64::INFINITY, deriv)
}

/// As [`rk4_integrate`], aborting with `NumericalBlowup` as soon as a
/// component is non-finite or exceeds `bound` in magnitude.
pub fn rk4_integrate_guarded<F>(
    grid: &TimeGrid,
    y0: &[C64],
    bound: f64,
    mut deriv: F,
) -> Result<StateSeries>
where
    F: FnMut(Sample, &[C64], &mut [C64]),
{
    grid.require_half_steps()?;
    let n = y0.len();
    let dt = grid.dt();
    let mut out = StateSeries::with_capacity(n, grid.sample_count());
    check_state(y0, bound, grid.t0())?;
    out.push(y0);

    let mut y = y0.to_vec();
    let mut k = [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]];
    let mut tmp = vec![ZERO; n];
    let mut mid = vec![ZERO; n];

    for step in 0..grid.n_steps() {
        let j0 = 2 * step;
        let s0 = Sample { index: j0, t: grid.half_time(j0) };
        let sh = Sample { index: j0 + 1, t: grid.half_time(j0 + 1) };
        let s1 = Sample { index: j0 + 2, t: grid.half_time(j0 + 2) };

        deriv(s0, &y, &mut k[0]);
        axpy_into(&y, 0.5 * dt, &k[0], &mut tmp);
        deriv(sh, &tmp, &mut k[1]);
        axpy_into(&y, 0.5 * dt, &k[1], &mut tmp);
        deriv(sh, &tmp, &mut k[2]);
        axpy_into(&y, dt, &k[2], &mut tmp);
        deriv(s1, &tmp, &mut k[3]);

        for i in 0..n {
            mid[i] = y[i]
                + dt * (DENSE_HALF[0] * k[0][i]
                    + DENSE_HALF[1] * k[1][i]
                    + DENSE_HALF[2] * k[2][i]
                    + DENSE_HALF[3] * k[3][i]);
            y[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        check_state(&mid, bound, sh.t)?;
        check_state(&y, bound, s1.t)?;
        out.push(&mid);
        out.push(&y);
    }
    Ok(out)
}

#[inline]
fn axpy_into(y: &[C64], a: f64, x: &[C64], out: &mut [C64]) {
    for ((o, yi), xi) in out.iter_mut().zip(y).zip(x) {
        *o = yi + a * xi;
    }
}

fn check_state(y: &[C64], bound: f64, time: f64) -> Result<()> {
    for z in y {
        if !(z.re.is_finite() && z.im.is_finite()) || z.norm() > bound {
            return Err(QsdError::NumericalBlowup { time });
        }
    }
    Ok(())
}

/// `R[g, h](t) = int_0^t exp(int_u^t g) h(u) du` on the half grid, computed
/// from `R' = g R + h`, `R(0) = 0`.
pub fn cumulative_exp_integral(g: &[C64], h: &[C64], grid: &TimeGrid) -> Result<Vec<C64>> {
    grid.check_half_series(g.len(), "rate series g")?;
    grid.check_half_series(h.len(), "forcing series h")?;
    let sol = rk4_integrate(grid, &[ZERO], |s, y, out| {
        out[0] = g[s.index] * y[0] + h[s.index];
    })?;
    Ok(sol.component(0))
}

/// Running integral `int_{t0}^{t_k} f` at every full node, by Simpson's
/// rule on each step using the midpoint sample.
pub fn simpson_cumulative(f: &[C64], grid: &TimeGrid) -> Result<Vec<C64>> {
    grid.check_half_series(f.len(), "integrand")?;
    let w = grid.dt() / 6.0;
    let mut acc = ZERO;
    let mut out = Vec::with_capacity(grid.node_count());
    out.push(acc);
    for k in 0..grid.n_steps() {
        acc += w * (f[2 * k] + 4.0 * f[2 * k + 1] + f[2 * k + 2]);
        out.push(acc);
    }
    Ok(out)
}

/// Second-order finite-difference derivative of uniformly spaced samples,
/// central in the interior and one-sided at both ends.
pub fn central_difference(f: &[C64], spacing: f64) -> Vec<C64> {
    let n = f.len();
    assert!(n >= 3, "need at least three samples");
    let inv = 1.0 / (2.0 * spacing);
    let mut d = Vec::with_capacity(n);
    d.push((-3.0 * f[0] + 4.0 * f[1] - f[2]) * inv);
    for j in 1..n - 1 {
        d.push((f[j + 1] - f[j - 1]) * inv);
    }
    d.push((3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) * inv);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix::I;

    #[test]
    fn single_step_of_rotation() {
        let grid = TimeGrid::new(0.0, 0.1, 1).unwrap();
        let sol = rk4_integrate(&grid, &[C64::new(1.0, 0.0)], |_, y, out| out[0] = -I * y[0]).unwrap();
        // one RK4 step reproduces the degree-4 Taylor polynomial of exp(-ih);
        // the remaining truncation error is h^5 / 120
        let h = -0.1 * I;
        let taylor = 1.0 + h + h * h / 2.0 + h * h * h / 6.0 + h * h * h * h / 24.0;
        assert!((sol.last()[0] - taylor).norm() < 1e-15);
        let err = (sol.last()[0] - h.exp()).norm();
        assert!((err - 1e-5 / 120.0).abs() < 1e-9, "{err}");
        // dense midpoint is third order
        assert!((sol.get(1)[0] - (-0.05 * I).exp()).norm() < 1e-5);
    }

    #[test]
    fn zero_derivative_is_constant() {
        let grid = TimeGrid::new(0.0, 0.05, 40).unwrap();
        let y0 = [C64::new(0.3, -2.0), C64::new(1.5, 0.25)];
        let sol = rk4_integrate(&grid, &y0, |_, _, out| out.fill(ZERO)).unwrap();
        assert_eq!(sol.len(), grid.sample_count());
        assert!(sol.iter().all(|s| s == y0));
    }

    #[test]
    fn observed_order_on_linear_system() {
        // y' = (-0.3 + 2i) y + cos t has a closed form
        let a = C64::new(-0.3, 2.0);
        let exact = |t: f64| {
            // particular solution of y' = a y + cos t plus homogeneous part with y(0) = 1
            let p = |t: f64| {
                let e1 = C64::new(0.0, t).exp();
                let e2 = C64::new(0.0, -t).exp();
                0.5 * (e1 / (I - a) + e2 / (-I - a))
            };
            p(t) + (C64::new(1.0, 0.0) - p(0.0)) * (a * t).exp()
        };
        let err = |dt: f64| {
            let grid = TimeGrid::span(2.0, dt).unwrap();
            let sol = rk4_integrate(&grid, &[C64::new(1.0, 0.0)], |s, y, out| {
                out[0] = a * y[0] + s.t.cos();
            })
            .unwrap();
            (0..grid.node_count())
                .map(|k| (sol.get(2 * k)[0] - exact(grid.time(k))).norm())
                .fold(0.0, f64::max)
        };
        let dts = [1e-2, 5e-3, 2.5e-3];
        let errs: Vec<f64> = dts.iter().map(|&h| err(h)).collect();
        let slope = (errs[0] / errs[2]).ln() / (dts[0] / dts[2]).ln();
        assert!(slope >= 3.9, "observed order {slope}, errors {errs:?}");
    }

    #[test]
    fn blowup_is_reported_with_time() {
        let grid = TimeGrid::new(0.0, 0.1, 100).unwrap();
        let err = rk4_integrate_guarded(&grid, &[C64::new(1.0, 0.0)], 1e3, |_, y, out| {
            out[0] = 10.0 * y[0];
        })
        .unwrap_err();
        match err {
            QsdError::NumericalBlowup { time } => assert!(time > 0.5 && time < 1.0),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn nonfinite_is_blowup() {
        let grid = TimeGrid::new(0.0, 0.1, 3).unwrap();
        let err = rk4_integrate(&grid, &[C64::new(1.0, 0.0)], |_, _, out| {
            out[0] = C64::new(f64::NAN, 0.0);
        });
        assert!(matches!(err, Err(QsdError::NumericalBlowup { .. })));
    }

    #[test]
    fn cumulative_integral_of_constants() {
        let grid = TimeGrid::span(3.0, 1e-2).unwrap();
        let m = grid.sample_count();
        let r = cumulative_exp_integral(&vec![ZERO; m], &vec![C64::new(1.0, 0.0); m], &grid).unwrap();
        for (j, v) in r.iter().enumerate() {
            assert!((v - grid.half_time(j)).norm() < 1e-12);
        }
        let r0 = cumulative_exp_integral(&vec![I; m], &vec![ZERO; m], &grid).unwrap();
        assert!(r0.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn cumulative_integral_closed_form() {
        let omega = 1.3;
        let z0 = C64::new(0.4, -0.7);
        let grid = TimeGrid::span(4.0, 1e-3).unwrap();
        let m = grid.sample_count();
        let s2 = std::f64::consts::SQRT_2;
        let r = cumulative_exp_integral(&vec![-I * omega; m], &vec![s2 * z0; m], &grid).unwrap();
        for (j, v) in r.iter().enumerate() {
            let t = grid.half_time(j);
            let exact = s2 * z0 * (1.0 - (-I * omega * t).exp()) / (I * omega);
            assert!((v - exact).norm() < 1e-8);
        }
    }

    #[test]
    fn mismatched_series_rejected() {
        let grid = TimeGrid::span(1.0, 0.1).unwrap();
        let e = cumulative_exp_integral(&[ZERO; 5], &[ZERO; 21], &grid);
        assert!(matches!(e, Err(QsdError::GridMismatch(_))));
    }

    #[test]
    fn simpson_and_differences() {
        let grid = TimeGrid::span(1.0, 0.01).unwrap();
        let f: Vec<C64> = grid.half_times().iter().map(|&t| C64::new(t * t, t.sin())).collect();
        let integral = simpson_cumulative(&f, &grid).unwrap();
        let exact = C64::new(1.0 / 3.0, 1.0 - 1f64.cos());
        assert!((integral.last().unwrap() - exact).norm() < 1e-11);
        let d = central_difference(&f, grid.dt() / 2.0);
        for (j, v) in d.iter().enumerate() {
            let t = grid.half_time(j);
            assert!((v - C64::new(2.0 * t, t.cos())).norm() < 1e-5);
        }
    }
}
