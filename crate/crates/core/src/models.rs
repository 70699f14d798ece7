//! Concrete system models: system Hamiltonian `H_s`, Lindblad operator `L`
//! and the ODEs for the coefficients of the `Obar(t)` operator.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use crate::error::{QsdError, Result};
use crate::noise::{CorrelationSpec, NoisePath};
use crate::numerics::{pauli, rk4_integrate_guarded, ComplexMatrix, TimeGrid, C64, I, ONE, ZERO};

/// Magnitude above which coefficient and state integrations abort.
pub const BLOWUP_BOUND: f64 = 1e12;

/// Tolerance for the Hermiticity of `H_s` checked at construction.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    RwaQubit,
    ThreeLevel,
    ReverseEngineered,
    /// `L = 0`, `Obar = 0`: plain Schrodinger evolution under `H_s`.
    ClosedSystem,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::RwaQubit => "rwa-qubit",
            ModelKind::ThreeLevel => "three-level",
            ModelKind::ReverseEngineered => "reverse-engineered",
            ModelKind::ClosedSystem => "closed-system",
        }
    }
}

/// Constant term of the qubit Riccati equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RiccatiForcing {
    /// `lambda alpha(t, t) = lambda gamma Gamma / 2`
    #[default]
    Full,
    /// `lambda gamma / 2`, dropping `Gamma`. Only correct at `Gamma = 1`;
    /// kept as a negative control.
    PaperLiteral,
}

/// How the three-level coefficient hierarchy is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThreeLevelClosure {
    /// Carries the auxiliary coefficient `W`; exact for the OU kernel.
    #[default]
    Auxiliary,
    /// Sets `W = 0`. Breaks trace preservation; kept as a negative control.
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub h_s: ComplexMatrix,
    pub l: ComplexMatrix,
    pub lambda: f64,
    pub omega: f64,
    pub correlation: CorrelationSpec,
    pub riccati: RiccatiForcing,
    pub closure: ThreeLevelClosure,
    /// Whether `Obar` depends on the noise path (and must be re-solved per path).
    pub noise_dependent_o: bool,
}

/// Named complex series on the half-step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSeries {
    pub grid: TimeGrid,
    series: BTreeMap<&'static str, Vec<C64>>,
}

impl CoefficientSeries {
    pub fn new(grid: TimeGrid) -> Self {
        Self { grid, series: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &'static str, values: Vec<C64>) -> Result<()> {
        self.grid.check_half_series(values.len(), name)?;
        self.series.insert(name, values);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[C64]> {
        self.series.get(name).map(Vec::as_slice)
    }

    pub fn require(&self, name: &str) -> Result<&[C64]> {
        self.get(name)
            .ok_or_else(|| QsdError::InvalidSpec(format!("coefficient series {name} missing")))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.series.keys().copied()
    }
}

/// `Obar(t)` on the half grid, stored contiguously (row-major per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct ObarSeries {
    dim: usize,
    data: Vec<C64>,
}

impl ObarSeries {
    fn from_fn(dim: usize, len: usize, mut fill: impl FnMut(usize, &mut [C64])) -> Self {
        let mut data = vec![ZERO; dim * dim * len];
        for (j, chunk) in data.chunks_exact_mut(dim * dim).enumerate() {
            fill(j, chunk);
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.dim * self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major entries of `Obar` at half index `j`.
    pub fn slice(&self, j: usize) -> &[C64] {
        let n = self.dim * self.dim;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn get(&self, j: usize) -> ComplexMatrix {
        ComplexMatrix::from_vec(self.dim, self.slice(j).to_vec()).expect("square")
    }

    pub fn iter(&self) -> impl Iterator<Item = ComplexMatrix> + '_ {
        (0..self.len()).map(|j| self.get(j))
    }
}

/// Solved coefficients plus the `Obar(t)` matrices on the half grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCoefficients {
    pub coefficients: CoefficientSeries,
    pub o_bar: ObarSeries,
}

impl ModelCoefficients {
    pub fn grid(&self) -> &TimeGrid {
        &self.coefficients.grid
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(QsdError::InvalidSpec(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

fn check_correlation(c: &CorrelationSpec) -> Result<()> {
    CorrelationSpec::ornstein_uhlenbeck(c.gamma, c.big_gamma).map(|_| ())
}

/// `E_ij` in dimension `d`.
fn unit(d: usize, i: usize, j: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d);
    m.as_mut_slice()[i * d + j] = ONE;
    m
}

impl ModelSpec {
    /// Dissipative qubit: `H_s = sigma_z`, `L = lambda sigma_-`, `Obar = F sigma_-`.
    pub fn make_rwa_qubit(lambda: f64, correlation: CorrelationSpec) -> Result<Self> {
        check_lambda(lambda)?;
        check_correlation(&correlation)?;
        Self::checked(Self {
            kind: ModelKind::RwaQubit,
            dim: 2,
            h_s: pauli::sigma_z(),
            l: pauli::sigma_minus().scale(C64::from(lambda)),
            lambda,
            omega: 1.0,
            correlation,
            riccati: RiccatiForcing::Full,
            closure: ThreeLevelClosure::Auxiliary,
            noise_dependent_o: false,
        })
    }

    /// Three-level atom: `H_s = omega J_z`, `L = J_- = sqrt2 (|0><1| + |1><2|)`,
    /// `Obar = F J_- + G J_z J_- + Pn J_-^2`.
    pub fn make_three_level(omega: f64, correlation: CorrelationSpec) -> Result<Self> {
        if !omega.is_finite() {
            return Err(QsdError::InvalidSpec(format!("omega must be finite, got {omega}")));
        }
        check_correlation(&correlation)?;
        let s = C64::from(SQRT_2);
        Self::checked(Self {
            kind: ModelKind::ThreeLevel,
            dim: 3,
            h_s: ComplexMatrix::diagonal(&[C64::from(omega), ZERO, C64::from(-omega)]),
            l: &unit(3, 0, 1).scale(s) + &unit(3, 1, 2).scale(s),
            lambda: 1.0,
            omega,
            correlation,
            riccati: RiccatiForcing::Full,
            closure: ThreeLevelClosure::Auxiliary,
            noise_dependent_o: true,
        })
    }

    /// Steering qubit with dark state `(|0> + |1>)/sqrt2`:
    /// `H_s = -omega sigma_x`, `L = lambda (sigma_z - i sigma_y)`, `Obar = f L`.
    pub fn make_reverse_engineered(
        omega: f64,
        lambda: f64,
        correlation: CorrelationSpec,
    ) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(QsdError::InvalidSpec(format!("omega must be > 0, got {omega}")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(QsdError::InvalidSpec(format!("lambda must be > 0, got {lambda}")));
        }
        check_correlation(&correlation)?;
        let l = &pauli::sigma_z() - &pauli::sigma_y().scale(I);
        Self::checked(Self {
            kind: ModelKind::ReverseEngineered,
            dim: 2,
            h_s: pauli::sigma_x().scale(C64::from(-omega)),
            l: l.scale(C64::from(lambda)),
            lambda,
            omega,
            correlation,
            riccati: RiccatiForcing::Full,
            closure: ThreeLevelClosure::Auxiliary,
            noise_dependent_o: false,
        })
    }

    /// Uncoupled system evolving under a Hermitian `h_s` alone.
    pub fn closed_system(h_s: ComplexMatrix, correlation: CorrelationSpec) -> Result<Self> {
        check_correlation(&correlation)?;
        let dim = h_s.dim();
        Self::checked(Self {
            kind: ModelKind::ClosedSystem,
            dim,
            h_s,
            l: ComplexMatrix::zeros(dim),
            lambda: 0.0,
            omega: 0.0,
            correlation,
            riccati: RiccatiForcing::Full,
            closure: ThreeLevelClosure::Auxiliary,
            noise_dependent_o: false,
        })
    }

    /// Selects the constant term of the qubit Riccati equation.
    pub fn with_riccati_forcing(mut self, forcing: RiccatiForcing) -> Self {
        self.riccati = forcing;
        self
    }

    /// Selects the closure of the three-level coefficient ODEs.
    pub fn with_closure(mut self, closure: ThreeLevelClosure) -> Self {
        self.closure = closure;
        self
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// The dark state `(|0> + |1>)/sqrt2` of the reverse-engineered model.
    pub fn target_state(&self) -> Option<Vec<C64>> {
        match self.kind {
            ModelKind::ReverseEngineered => {
                let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
                Some(vec![s, s])
            }
            _ => None,
        }
    }

    fn checked(self) -> Result<Self> {
        if !self.h_s.is_hermitian(HERMITIAN_TOL) {
            return Err(QsdError::InvalidSpec(format!(
                "H_s not Hermitian (defect {:e})",
                self.h_s.hermiticity_defect()
            )));
        }
        if self.l.dim() != self.dim || self.h_s.dim() != self.dim {
            return Err(QsdError::DimensionMismatch { expected: self.dim, got: self.l.dim() });
        }
        Ok(self)
    }

    fn riccati_constant(&self, coupling: f64) -> f64 {
        let c = &self.correlation;
        match self.riccati {
            RiccatiForcing::Full => coupling * c.alpha0(),
            RiccatiForcing::PaperLiteral => coupling * 0.5 * c.gamma,
        }
    }

    /// Solves the `Obar` coefficient ODEs on the half grid of `noise`.
    ///
    /// For models with `noise_dependent_o == false` the noise samples are
    /// not read and any path on the desired grid may be passed.
    pub fn solve_coefficients(&self, noise: &NoisePath) -> Result<ModelCoefficients> {
        let grid = noise.grid;
        grid.check_half_series(noise.samples.len(), "noise samples")?;
        match self.kind {
            ModelKind::RwaQubit => self.solve_rwa(&grid),
            ModelKind::ThreeLevel => self.solve_three_level(noise),
            ModelKind::ReverseEngineered => self.solve_reverse(&grid),
            ModelKind::ClosedSystem => Ok(ModelCoefficients {
                coefficients: CoefficientSeries::new(grid),
                o_bar: ObarSeries::from_fn(self.dim, grid.sample_count(), |_, _| {}),
            }),
        }
    }

    /// `F' = (-gamma + 2 i w) F + k F^2 + c`, `F(0) = 0`.
    fn qubit_riccati(grid: &TimeGrid, gamma: f64, w: f64, k: f64, c: f64) -> Result<Vec<C64>> {
        let rate = C64::new(-gamma, 2.0 * w);
        let sol = rk4_integrate_guarded(grid, &[ZERO], BLOWUP_BOUND, |_, y, out| {
            out[0] = rate * y[0] + k * y[0] * y[0] + c;
        })?;
        Ok(sol.component(0))
    }

    fn solve_rwa(&self, grid: &TimeGrid) -> Result<ModelCoefficients> {
        let f = Self::qubit_riccati(
            grid,
            self.correlation.gamma,
            1.0,
            self.lambda,
            self.riccati_constant(self.lambda),
        )?;
        let sm = pauli::sigma_minus();
        let sm = sm.as_slice();
        let o_bar = ObarSeries::from_fn(2, f.len(), |j, o| {
            for (oi, si) in o.iter_mut().zip(sm) {
                *oi = f[j] * si;
            }
        });
        let mut coefficients = CoefficientSeries::new(*grid);
        coefficients.insert("F", f)?;
        Ok(ModelCoefficients { coefficients, o_bar })
    }

    /// In the Hadamard frame the model is a qubit with `H' = -omega sigma_z`
    /// and `L' = 2 lambda sigma_+`, i.e. the dissipative qubit with levels
    /// swapped, so `Obar' = F' sigma_+` with the usual Riccati at coupling
    /// `2 lambda`. Transforming back gives `Obar = (F' / 2 lambda) L`.
    fn solve_reverse(&self, grid: &TimeGrid) -> Result<ModelCoefficients> {
        let k = 2.0 * self.lambda;
        let fr = Self::qubit_riccati(
            grid,
            self.correlation.gamma,
            self.omega,
            k,
            self.riccati_constant(k),
        )?;
        let f: Vec<C64> = fr.iter().map(|x| x / k).collect();
        let l = self.l.as_slice();
        let o_bar = ObarSeries::from_fn(2, f.len(), |j, o| {
            for (oi, li) in o.iter_mut().zip(l) {
                *oi = f[j] * li;
            }
        });
        let mut coefficients = CoefficientSeries::new(*grid);
        coefficients.insert("F", fr)?;
        coefficients.insert("f", f)?;
        Ok(ModelCoefficients { coefficients, o_bar })
    }

    /// With `S = F + G` and an auxiliary `W` closing the hierarchy:
    ///
    /// ```text
    /// S'  = a0 + (-gamma - i w + 2 S) S
    /// F'  = a0 + (-gamma - i w - 2 G) F + 2 W
    /// W'  = a0 G + (-2 gamma - 2 i w + 4 F + 2 G) W
    /// Pn' = (-gamma - 2 i w + 4 F + 2 G) Pn - G z*
    /// ```
    ///
    /// where `a0 = gamma Gamma / 2`, all starting from zero.
    fn solve_three_level(&self, noise: &NoisePath) -> Result<ModelCoefficients> {
        let grid = noise.grid;
        let gamma = self.correlation.gamma;
        let a0 = self.correlation.alpha0();
        let w = self.omega;
        let r1 = C64::new(-gamma, -w);
        let r2 = C64::new(-2.0 * gamma, -2.0 * w);
        let r3 = C64::new(-gamma, -2.0 * w);
        let z = &noise.samples;
        let closure = self.closure;
        // state: F, G, W, Pn
        let sol = rk4_integrate_guarded(&grid, &[ZERO; 4], BLOWUP_BOUND, |s, y, out| {
            let (f, g, wa, p) = (y[0], y[1], y[2], y[3]);
            let sum = f + g;
            let ds = a0 + (r1 + 2.0 * sum) * sum;
            let df = a0 + (r1 - 2.0 * g) * f + 2.0 * wa;
            out[0] = df;
            out[1] = ds - df;
            out[2] = match closure {
                ThreeLevelClosure::Auxiliary => a0 * g + (r2 + 4.0 * f + 2.0 * g) * wa,
                ThreeLevelClosure::Truncated => ZERO,
            };
            out[3] = (r3 + 4.0 * f + 2.0 * g) * p - g * z[s.index];
        })?;
        let (f, g, wa, p) = (sol.component(0), sol.component(1), sol.component(2), sol.component(3));
        let s2 = C64::from(SQRT_2);
        let o_bar = ObarSeries::from_fn(3, f.len(), |j, d| {
            d[1] = s2 * (f[j] + g[j]);
            d[5] = s2 * f[j];
            d[2] = 2.0 * p[j];
        });
        let mut coefficients = CoefficientSeries::new(grid);
        coefficients.insert("F", f)?;
        coefficients.insert("G", g)?;
        coefficients.insert("W", wa)?;
        coefficients.insert("Pn", p)?;
        Ok(ModelCoefficients { coefficients, o_bar })
    }
}

/// Fixed point of the qubit Riccati `F' = (-gamma + 2 i w) F + k F^2 + c`
/// that is linearly stable, i.e. `Re(-gamma + 2 i w + 2 k F) < 0`.
pub fn stable_riccati_root(gamma: f64, w: f64, k: f64, c: f64) -> Option<C64> {
    let b = C64::new(-gamma, 2.0 * w);
    if k == 0.0 {
        return Some(-c / b);
    }
    let disc = (b * b - 4.0 * k * c).sqrt();
    [(-b + disc) / (2.0 * k), (-b - disc) / (2.0 * k)]
        .into_iter()
        .find(|r| (b + 2.0 * k * r).re < 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou(g: f64, gg: f64) -> CorrelationSpec {
        CorrelationSpec::ornstein_uhlenbeck(g, gg).unwrap()
    }

    fn zero_path(t: f64, dt: f64) -> NoisePath {
        NoisePath::zero(TimeGrid::span(t, dt).unwrap())
    }

    #[test]
    fn rejects_bad_parameters() {
        let c = ou(1.0, 1.0);
        assert!(ModelSpec::make_rwa_qubit(-1.0, c).is_err());
        assert!(ModelSpec::make_reverse_engineered(0.0, 1.0, c).is_err());
        assert!(ModelSpec::make_reverse_engineered(1.0, 0.0, c).is_err());
        assert!(ModelSpec::make_three_level(f64::NAN, c).is_err());
        let bad = CorrelationSpec { gamma: -1.0, big_gamma: 1.0 };
        assert!(matches!(ModelSpec::make_rwa_qubit(1.0, bad), Err(QsdError::InvalidSpec(_))));
        let not_herm = ComplexMatrix::from_rows(&[[ZERO, ONE], [ZERO, ZERO]]);
        assert!(ModelSpec::closed_system(not_herm, c).is_err());
    }

    #[test]
    fn zero_coupling_gives_zero_obar() {
        let m = ModelSpec::make_rwa_qubit(0.0, ou(1.0, 1.0)).unwrap();
        let co = m.solve_coefficients(&zero_path(5.0, 0.01)).unwrap();
        assert!(co.coefficients.require("F").unwrap().iter().all(|f| *f == ZERO));
        assert!(co.o_bar.iter().all(|o| o.max_abs() == 0.0));
    }

    #[test]
    fn obar_vanishes_initially() {
        let grid = TimeGrid::span(1.0, 0.01).unwrap();
        let c = ou(2.0, 0.7);
        let noise = crate::noise::sample_ou_path(&c, &grid, 3).unwrap();
        for m in [
            ModelSpec::make_rwa_qubit(0.8, c).unwrap(),
            ModelSpec::make_three_level(1.3, c).unwrap(),
            ModelSpec::make_reverse_engineered(0.5, 1.2, c).unwrap(),
        ] {
            assert_eq!(m.solve_coefficients(&noise).unwrap().o_bar.get(0).max_abs(), 0.0);
            assert!(m.h_s.is_hermitian(1e-12));
        }
    }

    #[test]
    fn rwa_riccati_reaches_stable_root() {
        let m = ModelSpec::make_rwa_qubit(1.0, ou(1.0, 1.0)).unwrap();
        let co = m.solve_coefficients(&zero_path(25.0, 0.01)).unwrap();
        let f = co.coefficients.require("F").unwrap();
        // root of x^2 + (2i - 1) x + 1/2 = 0 with negative linearised rate
        let root = stable_riccati_root(1.0, 1.0, 1.0, 0.5).unwrap();
        assert!((root * root + C64::new(-1.0, 2.0) * root + 0.5).norm() < 1e-14);
        assert!((root - C64::new(0.08120347, 0.1938972)).norm() < 1e-8);
        // distance of the exact solution from the root at t = 20 is
        // 1.1866e-8 (DOP853, rtol 1e-13); it only drops below 1e-8 later
        let at20 = (f[4000] - root).norm();
        assert!((at20 / 1.1866e-8 - 1.0).abs() < 1e-3, "{at20:e}");
        assert!((f.last().unwrap() - root).norm() < 1e-9);
        assert!(f.iter().all(|x| x.norm() < 10.0));
    }

    #[test]
    fn literal_forcing_differs_only_off_unit_strength() {
        let grid_path = zero_path(3.0, 0.01);
        let full = ModelSpec::make_rwa_qubit(1.0, ou(1.0, 1.0)).unwrap();
        let lit = full.clone().with_riccati_forcing(RiccatiForcing::PaperLiteral);
        let a = full.solve_coefficients(&grid_path).unwrap();
        let b = lit.solve_coefficients(&grid_path).unwrap();
        assert_eq!(a, b);
        let full2 = ModelSpec::make_rwa_qubit(1.0, ou(1.0, 2.0)).unwrap();
        let lit2 = full2.clone().with_riccati_forcing(RiccatiForcing::PaperLiteral);
        let fa = full2.solve_coefficients(&grid_path).unwrap();
        let fb = lit2.solve_coefficients(&grid_path).unwrap();
        let d = fa.coefficients.require("F").unwrap()[100] - fb.coefficients.require("F").unwrap()[100];
        assert!(d.norm() > 0.1);
    }

    #[test]
    fn reverse_model_structure() {
        let m = ModelSpec::make_reverse_engineered(1.0, 1.0, ou(1.0, 1.0)).unwrap();
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        let target = [s, s];
        assert!(m.l.matvec(&target).iter().all(|z| z.norm() < 1e-15));
        let h = m.h_s.matvec(&target);
        assert!((h[0] + s).norm() < 1e-15 && (h[1] + s).norm() < 1e-15);
        assert!((&m.l * &m.l).max_abs() < 1e-15);
        let r = ComplexMatrix::from_real_rows(&[[1.0, 1.0], [1.0, -1.0]]).scale(s);
        let hr = &(&r * &m.h_s) * &r;
        let lr = &(&r * &m.l) * &r;
        assert!(hr.max_abs_diff(&pauli::sigma_z().scale(C64::from(-1.0))) < 1e-14);
        assert!(lr.max_abs_diff(&pauli::sigma_plus().scale(C64::from(2.0))) < 1e-14);
    }

    #[test]
    fn three_level_operators() {
        let m = ModelSpec::make_three_level(1.0, ou(1.0, 1.0)).unwrap();
        let jz = ComplexMatrix::diagonal(&[ONE, ZERO, -ONE]);
        let jzjm = &jz * &m.l;
        let jm2 = &m.l * &m.l;
        assert!(jzjm.max_abs_diff(&unit(3, 0, 1).scale(C64::from(SQRT_2))) < 1e-15);
        assert!(jm2.max_abs_diff(&unit(3, 0, 2).scale(C64::from(2.0))) < 1e-15);
        assert!(m.noise_dependent_o);
    }

    #[test]
    fn three_level_vanishes_without_bath() {
        let c = ou(1.0, 1e-30);
        let grid = TimeGrid::span(3.0, 0.01).unwrap();
        let noise = crate::noise::sample_ou_path(&c, &grid, 9).unwrap();
        let m = ModelSpec::make_three_level(1.0, c).unwrap();
        let co = m.solve_coefficients(&noise).unwrap();
        assert!(co.o_bar.iter().all(|o| o.max_abs() < 1e-25));
    }
}
