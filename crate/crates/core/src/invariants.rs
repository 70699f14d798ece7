//! Dynamical invariants `I(t)` with `dI/dt = -i [H_eff, I]`, their
//! bi-orthonormal eigendata and the closed-form trajectory built from them,
//!
//! ```text
//! psi(t) = sum_mu c_mu(t) phi_mu(t),
//! c_mu(t) = c_mu(0) exp(-int_0^t i <phi~_mu|H_eff|phi_mu> + <phi~_mu|dphi_mu/dt>)
//! ```

use std::f64::consts::SQRT_2;

use crate::error::{QsdError, Result};
use crate::models::{CoefficientSeries, ModelKind, ModelSpec, BLOWUP_BOUND};
use crate::noise::NoisePath;
use crate::numerics::eig::residual;
use crate::numerics::{
    central_difference, cumulative_exp_integral, eig_biorthonormal, inner, pair, pauli,
    rk4_integrate_guarded, simpson_cumulative, BiorthoDecomposition, ComplexMatrix, StateSeries,
    TimeGrid, C64, DEFAULT_DEGENERACY_TOL, I, ONE, ZERO,
};
use crate::qsd::{EffectiveHamiltonianFrame, Method, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvariantSource {
    Propagated,
    QubitClosedForm,
    ThreeLevelClosedForm,
    ReverseAnsatz,
}

/// `I(t)` and its eigendata at every half-grid sample.
#[derive(Debug, Clone)]
pub struct InvariantSeries {
    pub grid: TimeGrid,
    pub matrices: Vec<ComplexMatrix>,
    pub eigen: Vec<BiorthoDecomposition>,
    pub source: InvariantSource,
    /// Exact `d phi_mu / dt` per sample and eigenpair, when known in
    /// closed form. Otherwise finite differences are used.
    pub right_derivatives: Option<Vec<Vec<Vec<C64>>>>,
}

impl InvariantSeries {
    pub fn dim(&self) -> usize {
        self.matrices[0].dim()
    }

    /// `I(t_k)` at the full nodes.
    pub fn node_matrices(&self) -> Vec<ComplexMatrix> {
        self.matrices.iter().step_by(2).cloned().collect()
    }

    /// `max_t |mu_k(t) - mu_k(0)| / (1 + |mu_k(0)|)` over all eigenvalues.
    pub fn eigenvalue_drift(&self) -> f64 {
        let first = &self.eigen[0].eigenvalues;
        self.eigen
            .iter()
            .flat_map(|e| {
                e.eigenvalues
                    .iter()
                    .zip(first)
                    .map(|(m, m0)| (m - m0).norm() / (1.0 + m0.norm()))
            })
            .fold(0.0, f64::max)
    }

    /// Largest residual of the eigen relations over the series.
    pub fn max_eigen_residual(&self) -> f64 {
        self.eigen.iter().map(|e| e.residual).fold(0.0, f64::max)
    }

    /// Rescales `phi_mu(t) -> s phi_mu(t)` and `phi~_mu -> phi~_mu / s`,
    /// where `scale(mu, t)` returns `(s, ds/dt)`.
    pub fn regauged<S>(&self, scale: S) -> Self
    where
        S: Fn(usize, f64) -> (C64, C64),
    {
        let mut out = self.clone();
        let times = self.grid.half_times();
        for (j, e) in out.eigen.iter_mut().enumerate() {
            for mu in 0..e.dim() {
                let (s, ds) = scale(mu, times[j]);
                if let Some(d) = out.right_derivatives.as_mut() {
                    let v = &e.right[mu];
                    for (i, di) in d[j][mu].iter_mut().enumerate() {
                        *di = ds * v[i] + s * *di;
                    }
                }
                e.right[mu].iter_mut().for_each(|z| *z *= s);
                e.left[mu].iter_mut().for_each(|z| *z /= s);
            }
        }
        out
    }

    /// Drops the closed-form eigenvector derivatives so that
    /// [`analytic_solution`] falls back to finite differences.
    pub fn without_exact_derivatives(mut self) -> Self {
        self.right_derivatives = None;
        self
    }
}

fn eigen_series(matrices: &[ComplexMatrix], tol: f64) -> Result<Vec<BiorthoDecomposition>> {
    let mut out: Vec<BiorthoDecomposition> = Vec::with_capacity(matrices.len());
    let first = eig_biorthonormal(&matrices[0], tol)?;
    let pivots = first.pivots();
    out.push(first);
    for m in &matrices[1..] {
        let next = eig_biorthonormal(m, tol)?.aligned_to(out.last().unwrap(), &pivots);
        out.push(next);
    }
    Ok(out)
}

/// Integrates `dI/dt = -i [H_eff, I]` from `i0` and diagonalises every sample.
pub fn propagate_invariant(
    i0: &ComplexMatrix,
    model: &ModelSpec,
    noise: &NoisePath,
    grid: &TimeGrid,
) -> Result<InvariantSeries> {
    grid.ensure_same(&noise.grid, "noise path")?;
    let frame = EffectiveHamiltonianFrame::build(model, noise)?;
    propagate_invariant_in(&frame, i0)
}

pub fn propagate_invariant_in(
    frame: &EffectiveHamiltonianFrame,
    i0: &ComplexMatrix,
) -> Result<InvariantSeries> {
    let d = frame.dim();
    if i0.dim() != d {
        return Err(QsdError::DimensionMismatch { expected: d, got: i0.dim() });
    }
    let sol = rk4_integrate_guarded(&frame.grid, i0.as_slice(), BLOWUP_BOUND, |s, y, out| {
        let h = frame.h_eff(s.index);
        let h = h.as_slice();
        for r in 0..d {
            for c in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += h[r * d + k] * y[k * d + c] - y[r * d + k] * h[k * d + c];
                }
                out[r * d + c] = -I * acc;
            }
        }
    })?;
    let matrices = sol
        .iter()
        .map(|v| ComplexMatrix::from_vec(d, v.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let eigen = eigen_series(&matrices, DEFAULT_DEGENERACY_TOL)?;
    Ok(InvariantSeries {
        grid: frame.grid,
        matrices,
        eigen,
        source: InvariantSource::Propagated,
        right_derivatives: None,
    })
}

/// `I(t) = sigma_z + g(t) sigma_-` with `g' = (2i + lambda F) g + 2 lambda z*`,
/// `g(0) = 0`.
pub fn qubit_invariant(
    noise: &NoisePath,
    f: &[C64],
    lambda: f64,
    grid: &TimeGrid,
) -> Result<(Vec<C64>, InvariantSeries)> {
    grid.ensure_same(&noise.grid, "noise path")?;
    grid.check_half_series(f.len(), "F")?;
    let z = &noise.samples;
    let rate: Vec<C64> = f.iter().map(|&x| C64::new(0.0, 2.0) + lambda * x).collect();
    let forcing: Vec<C64> = z.iter().map(|&x| 2.0 * lambda * x).collect();
    let g = cumulative_exp_integral(&rate, &forcing, grid)?;

    let sz = pauli::sigma_z();
    let sm = pauli::sigma_minus();
    let mut matrices = Vec::with_capacity(g.len());
    let mut eigen = Vec::with_capacity(g.len());
    let mut derivs = Vec::with_capacity(g.len());
    for j in 0..g.len() {
        let m = &sz + &sm.scale(g[j]);
        let gd = rate[j] * g[j] + forcing[j];
        // eigenvalue -1: phi = (0, 1), phi~ = (-g/2, 1)
        // eigenvalue +1: phi = (1, g/2), phi~ = (1, 0)
        let mut dec = BiorthoDecomposition {
            eigenvalues: vec![-ONE, ONE],
            right: vec![vec![ZERO, ONE], vec![ONE, 0.5 * g[j]]],
            left: vec![vec![-0.5 * g[j], ONE], vec![ONE, ZERO]],
            residual: 0.0,
        };
        dec.residual = residual(&m, &dec);
        derivs.push(vec![vec![ZERO, ZERO], vec![ZERO, 0.5 * gd]]);
        matrices.push(m);
        eigen.push(dec);
    }
    Ok((
        g,
        InvariantSeries {
            grid: *grid,
            matrices,
            eigen,
            source: InvariantSource::QubitClosedForm,
            right_derivatives: Some(derivs),
        },
    ))
}

/// Decay rate used in the ODE for the `b` entry of the three-level invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BRate {
    /// `2F - 2 i omega`, which follows from the commutator equation.
    #[default]
    Derived,
    /// `F - i omega` as printed; kept as a negative control.
    PaperLiteral,
}

/// The upper-triangular invariant
///
/// ```text
///        [0  a  b]
/// I(t) = [0  1  c]
///        [0  0  2]
/// ```
///
/// with `a = R[2(F+G) - i w, sqrt2 z*]`, `c = R[-2G - i w, sqrt2 (z* - 2 Pn)]`,
/// `b = R[2F - 2 i w, sqrt2 (2 a Pn - (a - c) z*)]`.
pub fn three_level_invariant(
    noise: &NoisePath,
    coeffs: &CoefficientSeries,
    omega: f64,
    grid: &TimeGrid,
) -> Result<([Vec<C64>; 3], InvariantSeries)> {
    three_level_invariant_with(noise, coeffs, omega, grid, BRate::Derived)
}

pub fn three_level_invariant_with(
    noise: &NoisePath,
    coeffs: &CoefficientSeries,
    omega: f64,
    grid: &TimeGrid,
    b_rate: BRate,
) -> Result<([Vec<C64>; 3], InvariantSeries)> {
    grid.ensure_same(&noise.grid, "noise path")?;
    grid.ensure_same(&coeffs.grid, "coefficient series")?;
    let f = coeffs.require("F")?;
    let g = coeffs.require("G")?;
    let p = coeffs.require("Pn")?;
    let z = &noise.samples;
    let n = z.len();
    let s2 = SQRT_2;
    let iw = C64::new(0.0, omega);

    let ra: Vec<C64> = (0..n).map(|j| 2.0 * (f[j] + g[j]) - iw).collect();
    let ha: Vec<C64> = (0..n).map(|j| s2 * z[j]).collect();
    let a = cumulative_exp_integral(&ra, &ha, grid)?;
    let rc: Vec<C64> = (0..n).map(|j| -2.0 * g[j] - iw).collect();
    let hc: Vec<C64> = (0..n).map(|j| s2 * (z[j] - 2.0 * p[j])).collect();
    let c = cumulative_exp_integral(&rc, &hc, grid)?;
    let rb: Vec<C64> = (0..n)
        .map(|j| match b_rate {
            BRate::Derived => 2.0 * f[j] - 2.0 * iw,
            BRate::PaperLiteral => f[j] - iw,
        })
        .collect();
    let hb: Vec<C64> = (0..n)
        .map(|j| s2 * (2.0 * a[j] * p[j] - (a[j] - c[j]) * z[j]))
        .collect();
    let b = cumulative_exp_integral(&rb, &hb, grid)?;

    let mut matrices = Vec::with_capacity(n);
    let mut eigen = Vec::with_capacity(n);
    let mut derivs = Vec::with_capacity(n);
    let two = C64::from(2.0);
    for j in 0..n {
        let (aj, bj, cj) = (a[j], b[j], c[j]);
        let m = ComplexMatrix::from_rows(&[[ZERO, aj, bj], [ZERO, ONE, cj], [ZERO, ZERO, two]]);
        let mut dec = BiorthoDecomposition {
            eigenvalues: vec![ZERO, ONE, two],
            right: vec![
                vec![ONE, ZERO, ZERO],
                vec![aj, ONE, ZERO],
                vec![0.5 * (bj + aj * cj), cj, ONE],
            ],
            left: vec![
                vec![ONE, -aj, 0.5 * (aj * cj - bj)],
                vec![ZERO, ONE, -cj],
                vec![ZERO, ZERO, ONE],
            ],
            residual: 0.0,
        };
        dec.residual = residual(&m, &dec);
        let ad = ra[j] * aj + ha[j];
        let bd = rb[j] * bj + hb[j];
        let cd = rc[j] * cj + hc[j];
        derivs.push(vec![
            vec![ZERO; 3],
            vec![ad, ZERO, ZERO],
            vec![0.5 * (bd + ad * cj + aj * cd), cd, ZERO],
        ]);
        matrices.push(m);
        eigen.push(dec);
    }
    Ok((
        [a, b, c],
        InvariantSeries {
            grid: *grid,
            matrices,
            eigen,
            source: InvariantSource::ThreeLevelClosedForm,
            right_derivatives: Some(derivs),
        },
    ))
}

/// Initial invariant `[[p, -p-1], [p-1, -p]]` with the fixed eigenvector
/// `(1, 1)/sqrt2` at eigenvalue `-1`.
pub fn reverse_ansatz(p: C64) -> ComplexMatrix {
    ComplexMatrix::from_rows(&[[p, -p - ONE], [p - ONE, -p]])
}

/// The invariant used for the closed-form trajectory of each model.
///
/// Closed forms for the dissipative qubit and the three-level atom; the
/// reverse-engineered model propagates the `p = 0` ansatz and closed
/// systems propagate `H_s`.
pub fn model_invariant(
    frame: &EffectiveHamiltonianFrame,
    model: &ModelSpec,
    noise: &NoisePath,
    coeffs: &CoefficientSeries,
) -> Result<InvariantSeries> {
    let grid = frame.grid;
    match model.kind {
        ModelKind::RwaQubit => Ok(qubit_invariant(noise, coeffs.require("F")?, model.lambda, &grid)?.1),
        ModelKind::ThreeLevel => Ok(three_level_invariant(noise, coeffs, model.omega, &grid)?.1),
        ModelKind::ReverseEngineered => {
            let mut inv = propagate_invariant_in(frame, &reverse_ansatz(ZERO))?;
            inv.source = InvariantSource::ReverseAnsatz;
            Ok(inv)
        }
        ModelKind::ClosedSystem => propagate_invariant_in(frame, &model.h_s),
    }
}

/// Exponents `-int_0^t (i <phi~|H_eff|phi> + <phi~|dphi/dt>)` at the full
/// nodes, one series per eigenpair.
fn coefficient_exponents(
    frame: &EffectiveHamiltonianFrame,
    inv: &InvariantSeries,
) -> Result<Vec<Vec<C64>>> {
    let grid = frame.grid;
    grid.ensure_same(&inv.grid, "invariant series")?;
    let d = inv.dim();
    if d != frame.dim() {
        return Err(QsdError::DimensionMismatch { expected: frame.dim(), got: d });
    }
    let n = inv.eigen.len();
    let spacing = 0.5 * grid.dt();
    let mut out = Vec::with_capacity(d);
    for mu in 0..d {
        let fd: Option<Vec<Vec<C64>>> = if inv.right_derivatives.is_none() {
            Some(
                (0..d)
                    .map(|i| {
                        let comp: Vec<C64> = inv.eigen.iter().map(|e| e.right[mu][i]).collect();
                        central_difference(&comp, spacing)
                    })
                    .collect(),
            )
        } else {
            None
        };
        let integrand: Vec<C64> = (0..n)
            .map(|j| {
                let e = &inv.eigen[j];
                let h = frame.h_eff(j);
                let energy = pair(&e.left[mu], &h.matvec(&e.right[mu]));
                let connection = match (&inv.right_derivatives, &fd) {
                    (Some(dv), _) => pair(&e.left[mu], &dv[j][mu]),
                    (None, Some(fd)) => (0..d).map(|i| e.left[mu][i] * fd[i][j]).sum(),
                    _ => unreachable!(),
                };
                -(I * energy + connection)
            })
            .collect();
        out.push(simpson_cumulative(&integrand, &grid)?);
    }
    Ok(out)
}

/// Closed-form trajectory from the bi-orthonormal eigendata of `inv`.
pub fn analytic_solution(
    inv: &InvariantSeries,
    model: &ModelSpec,
    noise: &NoisePath,
    psi0: &[C64],
) -> Result<TrajectoryRecord> {
    inv.grid.ensure_same(&noise.grid, "noise path")?;
    let frame = EffectiveHamiltonianFrame::build(model, noise)?;
    analytic_solution_in(&frame, inv, psi0)
}

pub fn analytic_solution_in(
    frame: &EffectiveHamiltonianFrame,
    inv: &InvariantSeries,
    psi0: &[C64],
) -> Result<TrajectoryRecord> {
    let d = frame.dim();
    if psi0.len() != d {
        return Err(QsdError::DimensionMismatch { expected: d, got: psi0.len() });
    }
    let exps = coefficient_exponents(frame, inv)?;
    let c0: Vec<C64> = (0..d).map(|mu| pair(&inv.eigen[0].left[mu], psi0)).collect();
    let nodes = frame.grid.node_count();
    let mut states = StateSeries::with_capacity(d, nodes);
    let mut coefficients = StateSeries::with_capacity(d, nodes);
    let mut psi = vec![ZERO; d];
    let mut c = vec![ZERO; d];
    for k in 0..nodes {
        let e = &inv.eigen[2 * k];
        psi.iter_mut().for_each(|z| *z = ZERO);
        for mu in 0..d {
            c[mu] = c0[mu] * exps[mu][k].exp();
            for i in 0..d {
                psi[i] += c[mu] * e.right[mu][i];
            }
        }
        states.push(&psi);
        coefficients.push(&c);
    }
    let mut rec = TrajectoryRecord::numeric(frame.grid, states);
    rec.coefficients = Some(coefficients);
    rec.method = Method::Analytic;
    Ok(rec)
}

/// `U(t) = sum_mu exp(...) |phi_mu(t)><phi~_mu(0)|` at the full nodes.
pub fn analytic_propagator(
    frame: &EffectiveHamiltonianFrame,
    inv: &InvariantSeries,
) -> Result<Vec<ComplexMatrix>> {
    let d = frame.dim();
    let exps = coefficient_exponents(frame, inv)?;
    let left0 = &inv.eigen[0].left;
    Ok((0..frame.grid.node_count())
        .map(|k| {
            let e = &inv.eigen[2 * k];
            let mut u = ComplexMatrix::zeros(d);
            for mu in 0..d {
                let w = exps[mu][k].exp();
                for i in 0..d {
                    let v = w * e.right[mu][i];
                    for j in 0..d {
                        u[(i, j)] += v * left0[mu][j];
                    }
                }
            }
            u
        })
        .collect())
}

/// Step-wise residual of `dI/dt = -i [H_eff, I]`: the central difference
/// of `I` across each RK4 step against the Simpson mean of the generator
/// over the same step. Returns the largest entry.
///
/// The generator contains `z*_t`, which has no time derivative for OU
/// noise, so comparing a difference quotient with the generator at a
/// single instant measures the roughness of the noise rather than the
/// invariant.
pub fn eq5_residual(frame: &EffectiveHamiltonianFrame, inv: &InvariantSeries) -> Result<f64> {
    frame.grid.ensure_same(&inv.grid, "invariant series")?;
    let dt = frame.grid.dt();
    let gen = |j: usize| {
        let h = frame.h_eff(j);
        h.commutator(&inv.matrices[j]).scale(-I)
    };
    let mut worst = 0.0f64;
    for k in 0..frame.grid.n_steps() {
        let j = 2 * k;
        let diff = (&inv.matrices[j + 2] - &inv.matrices[j]).scale(C64::from(1.0 / dt));
        let mean = (&(&gen(j) + &gen(j + 2)) + &gen(j + 1).scale(C64::from(4.0)))
            .scale(C64::from(1.0 / 6.0));
        worst = worst.max(diff.max_abs_diff(&mean));
    }
    Ok(worst)
}

/// Pointwise residual `|(I(t+h) - I(t-h))/2h + i [H_eff(t), I(t)]|` on the
/// half grid, `h = dt/2`. Only meaningful for smooth drivers.
pub fn eq5_pointwise_residual(
    frame: &EffectiveHamiltonianFrame,
    inv: &InvariantSeries,
) -> Result<f64> {
    frame.grid.ensure_same(&inv.grid, "invariant series")?;
    let d = inv.dim();
    let n = inv.matrices.len();
    let spacing = 0.5 * frame.grid.dt();
    let mut worst = 0.0f64;
    let mut derivs = vec![Vec::new(); d * d];
    for (e, slot) in derivs.iter_mut().enumerate() {
        let comp: Vec<C64> = inv.matrices.iter().map(|m| m.as_slice()[e]).collect();
        *slot = central_difference(&comp, spacing);
    }
    for j in 0..n {
        let g = frame.h_eff(j).commutator(&inv.matrices[j]).scale(-I);
        for (e, dv) in derivs.iter().enumerate() {
            worst = worst.max((dv[j] - g.as_slice()[e]).norm());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct DriftReport {
    /// `Tr[P~(t) I(t)] = <psi~(t)|I(t)|psi(t)>` at the full nodes.
    pub series: Vec<C64>,
    /// `max_t |s(t) - s(0)| / max(1, |s(0)|)`
    pub drift: f64,
}

/// Evaluates the conserved quantity `Tr[P~_z(t) I(t)]` along a pair of
/// trajectories driven by the same noise path.
pub fn conservation_drift(
    right: &TrajectoryRecord,
    left: &TrajectoryRecord,
    inv: &InvariantSeries,
) -> Result<DriftReport> {
    right.grid.ensure_same(&left.grid, "left trajectory")?;
    right.grid.ensure_same(&inv.grid, "invariant series")?;
    let left_states = left.left_states.as_ref().unwrap_or(&left.right_states);
    let series: Vec<C64> = (0..right.grid.node_count())
        .map(|k| {
            let ipsi = inv.matrices[2 * k].matvec(right.right_states.get(k));
            inner(left_states.get(k), &ipsi)
        })
        .collect();
    let s0 = series[0];
    let drift = series.iter().map(|s| (s - s0).norm()).fold(0.0, f64::max) / s0.norm().max(1.0);
    Ok(DriftReport { series, drift })
}

#[derive(Debug, Clone)]
pub struct TargetReport {
    /// `max_t ||I psi_T - <psi_T|I|psi_T> psi_T|| / ||psi_T||`
    pub residual: f64,
    /// Rayleigh quotient `<psi_T|I|psi_T>` at the full nodes.
    pub eigenvalue: Vec<C64>,
}

/// Checks that `psi_t` is an eigenvector of `I(t)` at every full node.
pub fn target_invariant_check(
    model: &ModelSpec,
    inv: &InvariantSeries,
    psi_t: &[C64],
) -> Result<TargetReport> {
    if model.dim != 2 || inv.dim() != 2 {
        return Err(QsdError::DimensionMismatch { expected: 2, got: inv.dim() });
    }
    if psi_t.len() != 2 {
        return Err(QsdError::DimensionMismatch { expected: 2, got: psi_t.len() });
    }
    let nn = inner(psi_t, psi_t).re;
    let mut residual = 0.0f64;
    let mut eigenvalue = Vec::with_capacity(inv.grid.node_count());
    for m in inv.matrices.iter().step_by(2) {
        let v = m.matvec(psi_t);
        let q = inner(psi_t, &v) / nn;
        let r = ((v[0] - q * psi_t[0]).norm_sqr() + (v[1] - q * psi_t[1]).norm_sqr()).sqrt();
        residual = residual.max(r / nn.sqrt());
        eigenvalue.push(q);
    }
    Ok(TargetReport { residual, eigenvalue })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_ou_path, CorrelationSpec};
    use crate::numerics::expm;
    use crate::qsd::frame_right_trajectory;

    fn ou() -> CorrelationSpec {
        CorrelationSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap()
    }

    #[test]
    fn commuting_invariant_is_static() {
        let grid = TimeGrid::span(3.0, 1e-2).unwrap();
        let h = ComplexMatrix::from_real_rows(&[[1.0, 0.5], [0.5, -0.3]]);
        let m = ModelSpec::closed_system(h.clone(), ou()).unwrap();
        let inv = propagate_invariant(&h, &m, &NoisePath::zero(grid), &grid).unwrap();
        assert!(inv.matrices.iter().all(|i| i.max_abs_diff(&h) < 1e-13));
    }

    #[test]
    fn qubit_invariant_zero_forcing() {
        let grid = TimeGrid::span(2.0, 1e-2).unwrap();
        let f = vec![C64::new(0.3, 0.1); grid.sample_count()];
        let (g, inv) = qubit_invariant(&NoisePath::zero(grid), &f, 1.0, &grid).unwrap();
        assert!(g.iter().all(|x| *x == ZERO));
        assert!(inv.matrices.iter().all(|m| m.max_abs_diff(&pauli::sigma_z()) == 0.0));
    }

    #[test]
    fn qubit_invariant_constant_noise() {
        let grid = TimeGrid::span(3.0, 1e-3).unwrap();
        let z0 = C64::new(0.4, -0.2);
        let f = vec![ZERO; grid.sample_count()];
        let (g, _) = qubit_invariant(&NoisePath::constant(grid, z0), &f, 1.0, &grid).unwrap();
        for (j, t) in grid.half_times().into_iter().enumerate() {
            let want = -I * z0 * (C64::new(0.0, 2.0 * t).exp() - ONE);
            assert!((g[j] - want).norm() < 1e-8);
        }
    }

    #[test]
    fn three_level_constant_noise() {
        let grid = TimeGrid::span(3.0, 1e-3).unwrap();
        let z0 = C64::new(0.4, -0.2);
        let mut co = CoefficientSeries::new(grid);
        for name in ["F", "G", "Pn"] {
            co.insert(name, vec![ZERO; grid.sample_count()]).unwrap();
        }
        let ([a, _, _], _) =
            three_level_invariant(&NoisePath::constant(grid, z0), &co, 1.0, &grid).unwrap();
        for (j, t) in grid.half_times().into_iter().enumerate() {
            let want = SQRT_2 * z0 * (ONE - C64::new(0.0, -t).exp()) / I;
            assert!((a[j] - want).norm() < 1e-8);
        }
    }

    #[test]
    fn reverse_ansatz_fixes_target() {
        for p in [ZERO, C64::new(0.7, -1.3), C64::new(-4.0, 2.0)] {
            let v = reverse_ansatz(p).matvec(&[ONE, ONE]);
            assert!((v[0] + ONE).norm() < 1e-15 && (v[1] + ONE).norm() < 1e-15);
        }
    }

    #[test]
    fn closed_system_analytic() {
        let grid = TimeGrid::span(5.0, 1e-3).unwrap();
        let h = ComplexMatrix::from_real_rows(&[[1.0, 0.5], [0.5, -0.3]]);
        let m = ModelSpec::closed_system(h.clone(), ou()).unwrap();
        let noise = NoisePath::zero(grid);
        let inv = propagate_invariant(&h, &m, &noise, &grid).unwrap();
        let psi0 = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let rec = analytic_solution(&inv, &m, &noise, &psi0).unwrap();
        for (k, psi) in rec.right_states.iter().enumerate() {
            let exact = expm(&h.scale(C64::new(0.0, -grid.time(k)))).matvec(&psi0);
            assert!(crate::numerics::matrix::max_abs_diff(psi, &exact) < 1e-8);
        }
    }

    #[test]
    fn literal_b_rate_breaks_residual() {
        let grid = TimeGrid::span(3.0, 1e-3).unwrap();
        let noise = sample_ou_path(&ou(), &grid, 42).unwrap();
        let m = ModelSpec::make_three_level(1.0, ou()).unwrap();
        let frame = EffectiveHamiltonianFrame::build(&m, &noise).unwrap();
        let co = m.solve_coefficients(&noise).unwrap().coefficients;
        let (_, good) = three_level_invariant(&noise, &co, 1.0, &grid).unwrap();
        let (_, bad) =
            three_level_invariant_with(&noise, &co, 1.0, &grid, BRate::PaperLiteral).unwrap();
        let rg = eq5_residual(&frame, &good).unwrap();
        let rb = eq5_residual(&frame, &bad).unwrap();
        assert!(rg < 1e-4, "{rg:e}");
        assert!(rb > 1e-2, "{rb:e}");
    }

    #[test]
    fn pointwise_residual_sees_noise_roughness() {
        let grid = TimeGrid::span(2.0, 1e-3).unwrap();
        let noise = sample_ou_path(&ou(), &grid, 42).unwrap();
        let m = ModelSpec::make_rwa_qubit(1.0, ou()).unwrap();
        let frame = EffectiveHamiltonianFrame::build(&m, &noise).unwrap();
        let f = m.solve_coefficients(&noise).unwrap();
        let (_, inv) = qubit_invariant(&noise, f.coefficients.require("F").unwrap(), 1.0, &grid)
            .unwrap();
        let step = eq5_residual(&frame, &inv).unwrap();
        let point = eq5_pointwise_residual(&frame, &inv).unwrap();
        assert!(step < 1e-5, "{step:e}");
        assert!(point > 100.0 * step, "{point:e} vs {step:e}");
        // smooth driver: both agree to finite-difference accuracy
        let smooth = NoisePath::from_samples(
            grid,
            grid.half_times().iter().map(|t| C64::new(t.sin(), 0.3 * t)).collect(),
        )
        .unwrap();
        let frame = EffectiveHamiltonianFrame::build(&m, &smooth).unwrap();
        let (_, inv) =
            qubit_invariant(&smooth, f.coefficients.require("F").unwrap(), 1.0, &grid).unwrap();
        assert!(eq5_pointwise_residual(&frame, &inv).unwrap() < 1e-5);
    }

    #[test]
    fn qubit_analytic_matches_closed_expression() {
        let grid = TimeGrid::span(5.0, 1e-3).unwrap();
        let noise = sample_ou_path(&ou(), &grid, 42).unwrap();
        let m = ModelSpec::make_rwa_qubit(1.0, ou()).unwrap();
        let co = m.solve_coefficients(&noise).unwrap();
        let f = co.coefficients.require("F").unwrap();
        let (g, inv) = qubit_invariant(&noise, f, 1.0, &grid).unwrap();
        let psi0 = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let rec = analytic_solution(&inv, &m, &noise, &psi0).unwrap();
        let int_f = simpson_cumulative(f, &grid).unwrap();
        for (k, psi) in rec.right_states.iter().enumerate() {
            let t = grid.time(k);
            let e1 = psi0[0] * (-int_f[k] - C64::new(0.0, t)).exp();
            let e2 = psi0[1] * C64::new(0.0, t).exp();
            let want = [e1, e1 * 0.5 * g[2 * k] + e2];
            assert!(crate::numerics::matrix::max_abs_diff(psi, &want) < 1e-8);
        }
    }

    #[test]
    fn gauge_covariance() {
        let grid = TimeGrid::span(5.0, 1e-3).unwrap();
        let noise = sample_ou_path(&ou(), &grid, 5).unwrap();
        let m = ModelSpec::make_rwa_qubit(1.0, ou()).unwrap();
        let co = m.solve_coefficients(&noise).unwrap();
        let (_, inv) = qubit_invariant(&noise, co.coefficients.require("F").unwrap(), 1.0, &grid)
            .unwrap();
        let psi0 = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let base = analytic_solution(&inv, &m, &noise, &psi0).unwrap();
        let scaled = inv.regauged(|mu, t| {
            let w = 0.7 + mu as f64;
            let s = C64::new(1.0 + 0.3 * (w * t).sin(), 0.2 * t);
            let ds = C64::new(0.3 * w * (w * t).cos(), 0.2);
            (s, ds)
        });
        let rec = analytic_solution(&scaled, &m, &noise, &psi0).unwrap();
        assert!(rec.right_states.max_abs_diff(&base.right_states) < 1e-8);
    }

    #[test]
    fn propagated_reverse_invariant_keeps_target() {
        let grid = TimeGrid::span(10.0, 1e-3).unwrap();
        let noise = sample_ou_path(&ou(), &grid, 8).unwrap();
        let m = ModelSpec::make_reverse_engineered(1.0, 1.0, ou()).unwrap();
        let target = [C64::from(std::f64::consts::FRAC_1_SQRT_2); 2];
        let inv = propagate_invariant(&reverse_ansatz(ZERO), &m, &noise, &grid).unwrap();
        let rep = target_invariant_check(&m, &inv, &target).unwrap();
        assert!(rep.residual < 1e-6, "{:e}", rep.residual);
        assert!(rep.eigenvalue.iter().all(|q| (q + ONE).norm() < 1e-6));
        let random = ComplexMatrix::from_rows(&[
            [C64::new(0.3, 0.0), C64::new(0.2, -0.9)],
            [C64::new(0.2, 0.9), C64::new(-1.1, 0.0)],
        ]);
        let inv = propagate_invariant(&random, &m, &noise, &grid).unwrap();
        assert!(target_invariant_check(&m, &inv, &target).unwrap().residual > 1e-2);
    }

    #[test]
    fn drift_of_identity_is_pairing() {
        let grid = TimeGrid::span(5.0, 1e-3).unwrap();
        let noise = sample_ou_path(&ou(), &grid, 3).unwrap();
        let m = ModelSpec::make_rwa_qubit(1.0, ou()).unwrap();
        let frame = EffectiveHamiltonianFrame::build(&m, &noise).unwrap();
        let inv = InvariantSeries {
            grid,
            matrices: vec![ComplexMatrix::identity(2); grid.sample_count()],
            eigen: vec![eig_biorthonormal(&pauli::sigma_z(), 1e-8).unwrap(); grid.sample_count()],
            source: InvariantSource::Propagated,
            right_derivatives: None,
        };
        let psi = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let right = frame_right_trajectory(&frame, &psi).unwrap();
        let left = crate::qsd::integrate_pair(&frame, &psi, &psi).unwrap();
        assert!(conservation_drift(&right, &left, &inv).unwrap().drift < 1e-8);
    }
}
