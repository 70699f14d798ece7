//! Numerical integration of single quantum trajectories of the linear QSD
//! equation and of the stochastic propagator.

use std::sync::Arc;

use crate::error::{QsdError, Result};
use crate::models::{ModelCoefficients, ModelSpec, BLOWUP_BOUND};
use crate::noise::NoisePath;
use crate::numerics::{norm, rk4_integrate_guarded, ComplexMatrix, StateSeries, TimeGrid, C64, I};

/// `H_eff(t) = H_s + i L z*_t - i L^dagger Obar(t)` on the half grid.
///
/// The noise-free part `H_s - i L^dagger Obar(t)` is shared (it only
/// depends on the model and the grid for most models), the noise term is
/// added on demand.
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonianFrame {
    pub grid: TimeGrid,
    pub h_s: ComplexMatrix,
    pub l: ComplexMatrix,
    /// `H_s - i L^dagger Obar(t)`, row-major per half-grid sample.
    base: Arc<Vec<C64>>,
    z_conj: Vec<C64>,
}

/// Builds `H_s - i L^dagger Obar(t)` for every half-grid sample, stored
/// contiguously.
pub fn noise_free_part(model: &ModelSpec, coeffs: &ModelCoefficients) -> Arc<Vec<C64>> {
    let d = model.dim;
    let ld = model.l.adjoint();
    let ld = ld.as_slice();
    let hs = model.h_s.as_slice();
    let n = coeffs.o_bar.len();
    let mut out = vec![C64::new(0.0, 0.0); n * d * d];
    for (j, chunk) in out.chunks_exact_mut(d * d).enumerate() {
        let o = coeffs.o_bar.slice(j);
        for r in 0..d {
            for c in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..d {
                    acc += ld[r * d + k] * o[k * d + c];
                }
                chunk[r * d + c] = hs[r * d + c] - I * acc;
            }
        }
    }
    Arc::new(out)
}

impl EffectiveHamiltonianFrame {
    /// Solves the model coefficients for `noise` and assembles the frame.
    pub fn build(model: &ModelSpec, noise: &NoisePath) -> Result<Self> {
        let coeffs = model.solve_coefficients(noise)?;
        Self::from_parts(model, noise_free_part(model, &coeffs), noise)
    }

    /// Reuses a precomputed noise-free part, e.g. across the paths of an
    /// ensemble when `Obar` does not depend on the noise.
    pub fn from_parts(
        model: &ModelSpec,
        base: Arc<Vec<C64>>,
        noise: &NoisePath,
    ) -> Result<Self> {
        noise.grid.check_half_series(noise.samples.len(), "noise samples")?;
        let dd = model.dim * model.dim;
        if base.len() % dd != 0 {
            return Err(QsdError::DimensionMismatch { expected: dd, got: base.len() });
        }
        noise.grid.check_half_series(base.len() / dd, "noise-free H_eff series")?;
        Ok(Self {
            grid: noise.grid,
            h_s: model.h_s.clone(),
            l: model.l.clone(),
            base,
            z_conj: noise.samples.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.h_s.dim()
    }

    /// `H_eff` at half index `j`.
    pub fn h_eff(&self, j: usize) -> ComplexMatrix {
        let mut m = self.l.scale(I * self.z_conj[j]);
        for (x, b) in m.as_mut_slice().iter_mut().zip(self.base_at(j)) {
            *x += b;
        }
        m
    }

    #[inline]
    fn base_at(&self, j: usize) -> &[C64] {
        let dd = self.dim() * self.dim();
        &self.base[j * dd..(j + 1) * dd]
    }

    pub fn h_eff_series(&self) -> Vec<ComplexMatrix> {
        (0..self.grid.sample_count()).map(|j| self.h_eff(j)).collect()
    }

    /// Writes `-i H_eff(j) y` (or `-i H_eff(j)^dagger y`) into `out`.
    #[inline]
    fn apply(&self, j: usize, adjoint: bool, y: &[C64], out: &mut [C64]) {
        let d = self.dim();
        let b = self.base_at(j);
        let l = self.l.as_slice();
        let iz = I * self.z_conj[j];
        for r in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..d {
                let h = if adjoint {
                    (b[c * d + r] + iz * l[c * d + r]).conj()
                } else {
                    b[r * d + c] + iz * l[r * d + c]
                };
                acc += h * y[c];
            }
            out[r] = -I * acc;
        }
    }

    /// RK4 solution of `y' = -i H_eff y` (or with `H_eff^dagger`) on the
    /// half grid.
    pub fn evolve(&self, y0: &[C64], adjoint: bool) -> Result<StateSeries> {
        let d = self.dim();
        if y0.len() != d {
            return Err(QsdError::DimensionMismatch { expected: d, got: y0.len() });
        }
        rk4_integrate_guarded(&self.grid, y0, BLOWUP_BOUND, |s, y, out| {
            self.apply(s.index, adjoint, y, out)
        })
    }

    /// RK4 solution of `U' = -i H_eff U`, `U(0) = 1`, at the full nodes.
    pub fn propagator(&self) -> Result<Vec<ComplexMatrix>> {
        let d = self.dim();
        let y0 = ComplexMatrix::identity(d).as_slice().to_vec();
        // state is U row-major; each column evolves independently
        let sol = rk4_integrate_guarded(&self.grid, &y0, BLOWUP_BOUND, |s, y, out| {
            let mut col = vec![C64::new(0.0, 0.0); d];
            let mut res = vec![C64::new(0.0, 0.0); d];
            for c in 0..d {
                for r in 0..d {
                    col[r] = y[r * d + c];
                }
                self.apply(s.index, false, &col, &mut res);
                for r in 0..d {
                    out[r * d + c] = res[r];
                }
            }
        })?;
        (0..self.grid.node_count())
            .map(|k| ComplexMatrix::from_vec(d, sol.get(2 * k).to_vec()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Numeric,
    Analytic,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Numeric => "numeric",
            Method::Analytic => "analytic",
        }
    }
}

/// States at the full grid nodes of one trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub grid: TimeGrid,
    pub right_states: StateSeries,
    pub left_states: Option<StateSeries>,
    pub propagator: Option<Vec<ComplexMatrix>>,
    /// `||psi(t)||` of the right states (of `U(t)` in Frobenius norm for a
    /// propagator-only record).
    pub norms: Vec<f64>,
    /// Invariant-basis coefficients `c_mu(t)`.
    pub coefficients: Option<StateSeries>,
    pub method: Method,
}

impl TrajectoryRecord {
    pub(crate) fn numeric(grid: TimeGrid, right: StateSeries) -> Self {
        let norms = right.iter().map(norm).collect();
        Self {
            grid,
            right_states: right,
            left_states: None,
            propagator: None,
            norms,
            coefficients: None,
            method: Method::Numeric,
        }
    }

    /// Largest componentwise deviation of the right states.
    pub fn max_deviation(&self, other: &TrajectoryRecord) -> Result<f64> {
        self.grid.ensure_same(&other.grid, "trajectory comparison")?;
        Ok(self.right_states.max_abs_diff(&other.right_states))
    }
}

fn check_grid(noise: &NoisePath, grid: &TimeGrid) -> Result<()> {
    grid.ensure_same(&noise.grid, "noise path")
}

/// Integrates `d/dt psi = -i H_eff psi` from `psi0` (no normalisation).
pub fn integrate_right_trajectory(
    model: &ModelSpec,
    noise: &NoisePath,
    psi0: &[C64],
    grid: &TimeGrid,
) -> Result<TrajectoryRecord> {
    check_grid(noise, grid)?;
    let frame = EffectiveHamiltonianFrame::build(model, noise)?;
    frame_right_trajectory(&frame, psi0)
}

/// Integrates `i d/dt psi~ = H_eff^dagger psi~`.
pub fn integrate_left_trajectory(
    model: &ModelSpec,
    noise: &NoisePath,
    psi0: &[C64],
    grid: &TimeGrid,
) -> Result<TrajectoryRecord> {
    check_grid(noise, grid)?;
    let frame = EffectiveHamiltonianFrame::build(model, noise)?;
    let left = frame.evolve(psi0, true)?.strided(2);
    let mut rec = TrajectoryRecord::numeric(*grid, left.clone());
    rec.left_states = Some(left);
    Ok(rec)
}

/// Integrates both trajectories over the same frame; the record carries
/// the right states and `left_states`.
pub fn integrate_pair(
    frame: &EffectiveHamiltonianFrame,
    psi0: &[C64],
    psi_tilde0: &[C64],
) -> Result<TrajectoryRecord> {
    let mut rec = frame_right_trajectory(frame, psi0)?;
    rec.left_states = Some(frame.evolve(psi_tilde0, true)?.strided(2));
    Ok(rec)
}

pub fn frame_right_trajectory(
    frame: &EffectiveHamiltonianFrame,
    psi0: &[C64],
) -> Result<TrajectoryRecord> {
    let right = frame.evolve(psi0, false)?.strided(2);
    Ok(TrajectoryRecord::numeric(frame.grid, right))
}

/// Integrates the stochastic propagator `U_z(t)` column by column.
pub fn integrate_propagator(
    model: &ModelSpec,
    noise: &NoisePath,
    grid: &TimeGrid,
) -> Result<TrajectoryRecord> {
    check_grid(noise, grid)?;
    let frame = EffectiveHamiltonianFrame::build(model, noise)?;
    let u = frame.propagator()?;
    let d = model.dim;
    let mut first_column = StateSeries::with_capacity(d, u.len());
    for m in &u {
        let col: Vec<C64> = (0..d).map(|r| m[(r, 0)]).collect();
        first_column.push(&col);
    }
    let norms = u.iter().map(|m| m.frobenius_norm()).collect();
    Ok(TrajectoryRecord {
        grid: *grid,
        right_states: first_column,
        left_states: None,
        propagator: Some(u),
        norms,
        coefficients: None,
        method: Method::Numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_ou_path, CorrelationSpec};
    use crate::numerics::{expm, inner, pauli, simpson_cumulative, ONE, ZERO};

    fn ou() -> CorrelationSpec {
        CorrelationSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap()
    }

    #[test]
    fn closed_system_limit() {
        let grid = TimeGrid::span(5.0, 1e-3).unwrap();
        let noise = sample_ou_path(&ou(), &grid, 1).unwrap();
        let m = ModelSpec::make_rwa_qubit(0.0, ou()).unwrap();
        let psi0 = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let rec = integrate_right_trajectory(&m, &noise, &psi0, &grid).unwrap();
        for (k, psi) in rec.right_states.iter().enumerate() {
            let t = grid.time(k);
            let exact = expm(&m.h_s.scale(C64::new(0.0, -t))).matvec(&psi0);
            assert!(crate::numerics::matrix::max_abs_diff(psi, &exact) < 1e-10);
            assert!((rec.norms[k] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_noise_ground_component() {
        let grid = TimeGrid::span(3.0, 1e-3).unwrap();
        let noise = NoisePath::zero(grid);
        let m = ModelSpec::make_rwa_qubit(1.0, ou()).unwrap();
        let rec = integrate_right_trajectory(&m, &noise, &[ONE, ZERO], &grid).unwrap();
        let coeffs = m.solve_coefficients(&noise).unwrap();
        let int_f = simpson_cumulative(coeffs.coefficients.require("F").unwrap(), &grid).unwrap();
        for (k, psi) in rec.right_states.iter().enumerate() {
            let t = grid.time(k);
            let want = (C64::new(0.0, -t) - int_f[k]).exp();
            assert!((psi[0] - want).norm() < 1e-10);
            assert_eq!(psi[1], ZERO);
        }
    }

    #[test]
    fn left_equals_right_when_hermitian() {
        let grid = TimeGrid::span(2.0, 1e-2).unwrap();
        let m = ModelSpec::make_rwa_qubit(0.0, ou()).unwrap();
        let noise = NoisePath::zero(grid);
        let v = [C64::new(0.3, 0.1), C64::new(-0.2, 0.5)];
        let r = integrate_right_trajectory(&m, &noise, &v, &grid).unwrap();
        let l = integrate_left_trajectory(&m, &noise, &v, &grid).unwrap();
        assert!(r.right_states.max_abs_diff(l.left_states.as_ref().unwrap()) < 1e-15);
    }

    #[test]
    fn pairing_is_conserved() {
        let grid = TimeGrid::span(5.0, 1e-3).unwrap();
        let noise = sample_ou_path(&ou(), &grid, 12).unwrap();
        let m = ModelSpec::make_rwa_qubit(1.0, ou()).unwrap();
        let frame = EffectiveHamiltonianFrame::build(&m, &noise).unwrap();
        let psi = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let chi = [C64::new(0.1, 0.2), C64::new(0.9, -0.3)];
        let rec = integrate_pair(&frame, &psi, &chi).unwrap();
        let left = rec.left_states.as_ref().unwrap();
        let p0 = inner(left.get(0), rec.right_states.get(0));
        for k in 0..grid.node_count() {
            assert!((inner(left.get(k), rec.right_states.get(k)) - p0).norm() < 1e-8);
        }
    }

    #[test]
    fn propagator_is_consistent() {
        let grid = TimeGrid::span(3.0, 1e-3).unwrap();
        let noise = sample_ou_path(&ou(), &grid, 7).unwrap();
        let m = ModelSpec::make_rwa_qubit(1.0, ou()).unwrap();
        let prop = integrate_propagator(&m, &noise, &grid).unwrap();
        let u = prop.propagator.as_ref().unwrap();
        assert!(u[0].max_abs_diff(&ComplexMatrix::identity(2)) == 0.0);
        let psi0 = [C64::new(0.6, 0.1), C64::new(-0.3, 0.8)];
        let rec = integrate_right_trajectory(&m, &noise, &psi0, &grid).unwrap();
        for (k, m) in u.iter().enumerate() {
            let up = m.matvec(&psi0);
            assert!(crate::numerics::matrix::max_abs_diff(&up, rec.right_states.get(k)) < 1e-12);
        }
        // Liouville: det U = exp(-i int tr H_eff)
        let frame = EffectiveHamiltonianFrame::build(&m, &noise).unwrap();
        let tr: Vec<C64> = frame.h_eff_series().iter().map(|h| -I * h.trace()).collect();
        let int_tr = simpson_cumulative(&tr, &grid).unwrap();
        for (k, m) in u.iter().enumerate() {
            assert!((m.determinant() - int_tr[k].exp()).norm() < 1e-6);
        }
    }

    #[test]
    fn closed_propagator_is_unitary() {
        let grid = TimeGrid::span(5.0, 1e-3).unwrap();
        let noise = sample_ou_path(&ou(), &grid, 2).unwrap();
        let m = ModelSpec::closed_system(pauli::sigma_x(), ou()).unwrap();
        let u = integrate_propagator(&m, &noise, &grid).unwrap().propagator.unwrap();
        for (k, uk) in u.iter().enumerate() {
            let exact = expm(&m.h_s.scale(C64::new(0.0, -grid.time(k))));
            assert!(uk.max_abs_diff(&exact) < 1e-10);
            assert!((&uk.adjoint() * uk).max_abs_diff(&ComplexMatrix::identity(2)) < 1e-10);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let grid = TimeGrid::span(1.0, 1e-2).unwrap();
        let other = TimeGrid::span(1.0, 5e-3).unwrap();
        let m = ModelSpec::make_rwa_qubit(1.0, ou()).unwrap();
        let noise = NoisePath::zero(other);
        assert!(matches!(
            integrate_right_trajectory(&m, &noise, &[ONE, ZERO], &grid),
            Err(QsdError::GridMismatch(_))
        ));
    }

    #[test]
    fn blowup_is_reported() {
        let grid = TimeGrid::span(10.0, 1e-2).unwrap();
        let noise = NoisePath::zero(grid);
        // dt far outside the RK4 stability region
        let m = ModelSpec::closed_system(pauli::sigma_z().scale(C64::from(1e3)), ou()).unwrap();
        let r = integrate_right_trajectory(&m, &noise, &[ONE, ZERO], &grid);
        assert!(matches!(r, Err(QsdError::NumericalBlowup { .. })), "{r:?}");
    }
}
