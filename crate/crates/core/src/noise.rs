//! Complex Gaussian bath noise `z*_t` with a prescribed correlation
//! function `alpha(t, s) = M[z_t z*_s]`.
//!
//! Paths always live on the half-step grid so RK4 stages read exact
//! samples. Stored samples are `z*_t`, the quantity that drives the
//! trajectory equation.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{QsdError, Result};
use crate::numerics::{TimeGrid, C64, ZERO};
use crate::reduce::pairwise_sum_by;
use crate::rng::rng_from_seed;

/// Ornstein-Uhlenbeck bath: `alpha(t, s) = (gamma Gamma / 2) exp(-gamma |t - s|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    /// Inverse memory time.
    pub gamma: f64,
    /// Noise strength.
    pub big_gamma: f64,
}

impl CorrelationSpec {
    pub fn ornstein_uhlenbeck(gamma: f64, big_gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(QsdError::InvalidSpec(format!("gamma must be > 0, got {gamma}")));
        }
        if !(big_gamma > 0.0) || !big_gamma.is_finite() {
            return Err(QsdError::InvalidSpec(format!("Gamma must be > 0, got {big_gamma}")));
        }
        Ok(Self { gamma, big_gamma })
    }

    /// `alpha(t, t) = gamma Gamma / 2`
    pub fn alpha0(&self) -> f64 {
        0.5 * self.gamma * self.big_gamma
    }

    pub fn alpha(&self, t: f64, s: f64) -> f64 {
        self.alpha0() * (-self.gamma * (t - s).abs()).exp()
    }
}

/// Discrete bath `alpha(tau) ~ sum_k |g_k|^2 exp(-i w_k tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSumSpec {
    /// `(g_k, w_k)` pairs.
    pub modes: Vec<(C64, f64)>,
}

impl ModeSumSpec {
    pub fn new(modes: Vec<(C64, f64)>) -> Result<Self> {
        if modes.is_empty() {
            return Err(QsdError::InvalidSpec("mode list is empty".into()));
        }
        Ok(Self { modes })
    }

    /// Midpoint quadrature of the Lorentzian spectral density
    /// `J(w) = (gamma Gamma / 2) (gamma / pi) / (gamma^2 + w^2)` with
    /// `n_modes` equally spaced frequencies on `[-window gamma, window gamma]`.
    pub fn lorentzian(spec: &CorrelationSpec, n_modes: usize, window: f64) -> Result<Self> {
        if n_modes == 0 || !(window > 0.0) {
            return Err(QsdError::InvalidSpec("need n_modes >= 1 and window > 0".into()));
        }
        let g = spec.gamma;
        let w_max = window * g;
        let dw = 2.0 * w_max / n_modes as f64;
        let modes = (0..n_modes)
            .map(|k| {
                let w = -w_max + (k as f64 + 0.5) * dw;
                let j = spec.alpha0() * (g / PI) / (g * g + w * w);
                (C64::new((j * dw).sqrt(), 0.0), w)
            })
            .collect();
        Self::new(modes)
    }

    /// Default discretisation: 512 modes on `[-20 gamma, 20 gamma]`.
    pub fn lorentzian_default(spec: &CorrelationSpec) -> Self {
        Self::lorentzian(spec, 512, 20.0).expect("valid default")
    }

    pub fn count(&self) -> usize {
        self.modes.len()
    }

    /// `sum_k |g_k|^2 exp(-i w_k tau)`
    pub fn correlation(&self, tau: f64) -> C64 {
        self.modes
            .iter()
            .map(|(g, w)| g.norm_sqr() * C64::new(0.0, -w * tau).exp())
            .sum()
    }

    /// Largest `|sum_k ... - alpha(tau)|` over `tau` in `[0, tau_max]`.
    pub fn residual(&self, spec: &CorrelationSpec, tau_max: f64, samples: usize) -> f64 {
        (0..=samples)
            .map(|i| {
                let tau = tau_max * i as f64 / samples.max(1) as f64;
                (self.correlation(tau) - spec.alpha(tau, 0.0)).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// What generated a [`NoisePath`].
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    OrnsteinUhlenbeck(CorrelationSpec),
    ModeSum(Arc<ModeSumSpec>),
    /// Deterministic samples supplied by the caller.
    Prescribed,
}

/// One realisation of `z*_t` sampled on every half-grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub grid: TimeGrid,
    pub samples: Vec<C64>,
    pub seed: u64,
    pub source: NoiseSource,
}

impl NoisePath {
    pub fn from_samples(grid: TimeGrid, samples: Vec<C64>) -> Result<Self> {
        grid.require_half_steps()?;
        grid.check_half_series(samples.len(), "noise samples")?;
        Ok(Self {
            grid,
            samples,
            seed: 0,
            source: NoiseSource::Prescribed,
        })
    }

    pub fn zero(grid: TimeGrid) -> Self {
        Self::constant(grid, ZERO)
    }

    pub fn constant(grid: TimeGrid, value: C64) -> Self {
        Self {
            grid,
            samples: vec![value; grid.sample_count()],
            seed: 0,
            source: NoiseSource::Prescribed,
        }
    }

    /// `z*` at half index `j`.
    #[inline]
    pub fn z_conj(&self, j: usize) -> C64 {
        self.samples[j]
    }
}

fn circular_gaussian<R: Rng>(rng: &mut R, variance: f64) -> C64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Exact AR(1) discretisation of the complex OU process on the half grid:
/// `z_0 ~ CN(0, gamma Gamma / 2)`, `z_{j+1} = e^{-gamma D} z_j + xi_j` with
/// `xi_j ~ CN(0, (gamma Gamma / 2)(1 - e^{-2 gamma D}))` and `D = dt / 2`.
pub fn sample_ou_path(spec: &CorrelationSpec, grid: &TimeGrid, seed: u64) -> Result<NoisePath> {
    CorrelationSpec::ornstein_uhlenbeck(spec.gamma, spec.big_gamma)?;
    grid.require_half_steps()?;
    let mut rng = rng_from_seed(seed);
    let half = 0.5 * grid.dt();
    let decay = (-spec.gamma * half).exp();
    let innovation = spec.alpha0() * (-(-2.0 * spec.gamma * half).exp_m1());
    let m = grid.sample_count();
    let mut samples = Vec::with_capacity(m);
    let mut z = circular_gaussian(&mut rng, spec.alpha0());
    samples.push(z);
    for _ in 1..m {
        z = decay * z + circular_gaussian(&mut rng, innovation);
        samples.push(z);
    }
    Ok(NoisePath {
        grid: *grid,
        samples,
        seed,
        source: NoiseSource::OrnsteinUhlenbeck(*spec),
    })
}

/// `z*_t = -i sum_k g_k^* z_k^* e^{i w_k t}` with independent standard
/// circular Gaussians `z_k`.
pub fn sample_mode_sum_path(spec: &Arc<ModeSumSpec>, grid: &TimeGrid, seed: u64) -> Result<NoisePath> {
    if spec.modes.is_empty() {
        return Err(QsdError::InvalidSpec("mode list is empty".into()));
    }
    grid.require_half_steps()?;
    let mut rng = rng_from_seed(seed);
    let amps: Vec<C64> = spec
        .modes
        .iter()
        .map(|(g, _)| {
            let zk = circular_gaussian(&mut rng, 1.0);
            C64::new(0.0, -1.0) * g.conj() * zk.conj()
        })
        .collect();
    // advance every mode by a fixed phase per half step
    let half = 0.5 * grid.dt();
    let mut terms: Vec<C64> = amps
        .iter()
        .zip(&spec.modes)
        .map(|(a, (_, w))| a * C64::new(0.0, w * grid.t0()).exp())
        .collect();
    let steps: Vec<C64> = spec.modes.iter().map(|(_, w)| C64::new(0.0, w * half).exp()).collect();
    let mut samples = Vec::with_capacity(grid.sample_count());
    for j in 0..grid.sample_count() {
        if j > 0 {
            terms.iter_mut().zip(&steps).for_each(|(t, s)| *t *= s);
        }
        samples.push(terms.iter().sum());
    }
    Ok(NoisePath {
        grid: *grid,
        samples,
        seed,
        source: NoiseSource::ModeSum(Arc::clone(spec)),
    })
}

/// Sample moments of a set of paths on a common grid. Matrices are
/// row-major over half-grid samples, entry `(a, b)` referring to times
/// `(t_a, t_b)`.
#[derive(Debug, Clone)]
pub struct StatReport {
    pub n_paths: usize,
    pub times: Vec<f64>,
    /// `M[z*_t]`
    pub mean: Vec<C64>,
    /// Standard errors of the real and imaginary parts of `mean`.
    pub mean_se: Vec<(f64, f64)>,
    /// `M[z_t z*_s]`, unbiased.
    pub covariance: Vec<C64>,
    pub covariance_se: Vec<(f64, f64)>,
    /// `M[z_t z_s]`, unbiased.
    pub pseudo_covariance: Vec<C64>,
    pub pseudo_covariance_se: Vec<(f64, f64)>,
}

impl StatReport {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn cov(&self, a: usize, b: usize) -> C64 {
        self.covariance[a * self.len() + b]
    }

    pub fn cov_se(&self, a: usize, b: usize) -> (f64, f64) {
        self.covariance_se[a * self.len() + b]
    }

    pub fn pseudo(&self, a: usize, b: usize) -> C64 {
        self.pseudo_covariance[a * self.len() + b]
    }

    pub fn pseudo_se(&self, a: usize, b: usize) -> (f64, f64) {
        self.pseudo_covariance_se[a * self.len() + b]
    }
}

/// Distance of `value` from `target` in units of the (real, imag) standard
/// errors; the larger of the two components.
pub fn z_score(value: C64, target: C64, se: (f64, f64)) -> f64 {
    let d = value - target;
    let zr = if se.0 > 0.0 { d.re.abs() / se.0 } else if d.re == 0.0 { 0.0 } else { f64::INFINITY };
    let zi = if se.1 > 0.0 { d.im.abs() / se.1 } else if d.im == 0.0 { 0.0 } else { f64::INFINITY };
    zr.max(zi)
}

/// Unbiased means, covariances and pseudo-covariances with delete-one
/// jackknife standard errors.
pub fn noise_statistics(paths: &[NoisePath]) -> Result<StatReport> {
    if paths.len() < 2 {
        return Err(QsdError::InvalidSpec("noise statistics need at least two paths".into()));
    }
    let grid = paths[0].grid;
    for p in paths {
        grid.ensure_same(&p.grid, "noise statistics")?;
        grid.check_half_series(p.samples.len(), "noise samples")?;
    }
    let n = paths.len();
    let m = grid.sample_count();
    let nf = n as f64;

    let mut mean = Vec::with_capacity(m);
    let mut mean_se = Vec::with_capacity(m);
    for a in 0..m {
        let mu = pairwise_sum_by(n, &|i| paths[i].samples[a]) / nf;
        let var_re = pairwise_sum_by(n, &|i| (paths[i].samples[a].re - mu.re).powi(2)) / (nf - 1.0);
        let var_im = pairwise_sum_by(n, &|i| (paths[i].samples[a].im - mu.im).powi(2)) / (nf - 1.0);
        mean.push(mu);
        mean_se.push(((var_re / nf).sqrt(), (var_im / nf).sqrt()));
    }

    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (0..m).map(move |b| (a, b))).collect();
    let moments: Vec<[(C64, (f64, f64)); 2]> = pairs
        .par_iter()
        .map(|&(a, b)| {
            // z_t = conj(z*_t)
            let cov = jackknife_cross(n, &|i| paths[i].samples[a].conj(), &|i| paths[i].samples[b]);
            let pseudo = jackknife_cross(n, &|i| paths[i].samples[a].conj(), &|i| {
                paths[i].samples[b].conj()
            });
            [cov, pseudo]
        })
        .collect();

    Ok(StatReport {
        n_paths: n,
        times: grid.half_times(),
        mean,
        mean_se,
        covariance: moments.iter().map(|m| m[0].0).collect(),
        covariance_se: moments.iter().map(|m| m[0].1).collect(),
        pseudo_covariance: moments.iter().map(|m| m[1].0).collect(),
        pseudo_covariance_se: moments.iter().map(|m| m[1].1).collect(),
    })
}

/// Unbiased `Cov(x, y) = M[(x - x̄)(y - ȳ)]` and its jackknife standard
/// errors (real, imaginary).
fn jackknife_cross<X, Y>(n: usize, x: &X, y: &Y) -> (C64, (f64, f64))
where
    X: Fn(usize) -> C64 + Sync,
    Y: Fn(usize) -> C64 + Sync,
{
    let nf = n as f64;
    let sx = pairwise_sum_by(n, x);
    let sy = pairwise_sum_by(n, y);
    let sxy = pairwise_sum_by(n, &|i| x(i) * y(i));
    let full = (sxy - sx * sy / nf) / (nf - 1.0);
    if n < 3 {
        return (full, (f64::NAN, f64::NAN));
    }
    let loo = |i: usize| {
        let (xi, yi) = (x(i), y(i));
        (sxy - xi * yi - (sx - xi) * (sy - yi) / (nf - 1.0)) / (nf - 2.0)
    };
    let loo_mean = pairwise_sum_by(n, &loo) / nf;
    let ss_re = pairwise_sum_by(n, &|i| (loo(i).re - loo_mean.re).powi(2));
    let ss_im = pairwise_sum_by(n, &|i| (loo(i).im - loo_mean.im).powi(2));
    let f = (nf - 1.0) / nf;
    (full, ((f * ss_re).sqrt(), (f * ss_im).sqrt()))
}

/// Generates `count` OU paths with seeds `split_seed(master, i)` in parallel.
pub fn sample_ou_ensemble(
    spec: &CorrelationSpec,
    grid: &TimeGrid,
    master_seed: u64,
    count: usize,
) -> Result<Vec<NoisePath>> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_ou_path(spec, grid, crate::rng::split_seed(master_seed, i as u64)))
        .collect()
}

/// Generates `count` mode-sum paths with seeds `split_seed(master, i)`.
pub fn sample_mode_sum_ensemble(
    spec: &Arc<ModeSumSpec>,
    grid: &TimeGrid,
    master_seed: u64,
    count: usize,
) -> Result<Vec<NoisePath>> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_mode_sum_path(spec, grid, crate::rng::split_seed(master_seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou(g: f64, gg: f64) -> CorrelationSpec {
        CorrelationSpec::ornstein_uhlenbeck(g, gg).unwrap()
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        assert!(CorrelationSpec::ornstein_uhlenbeck(0.0, 1.0).is_err());
        assert!(CorrelationSpec::ornstein_uhlenbeck(1.0, 0.0).is_err());
        assert!(CorrelationSpec::ornstein_uhlenbeck(-1.0, 1.0).is_err());
        let bad = CorrelationSpec { gamma: 1.0, big_gamma: -2.0 };
        let grid = TimeGrid::span(1.0, 0.1).unwrap();
        assert!(matches!(sample_ou_path(&bad, &grid, 1), Err(QsdError::InvalidSpec(_))));
    }

    #[test]
    fn vanishing_strength_gives_vanishing_noise() {
        let grid = TimeGrid::span(5.0, 0.01).unwrap();
        let p = sample_ou_path(&ou(1.0, 1e-30), &grid, 3).unwrap();
        assert_eq!(p.samples.len(), grid.sample_count());
        assert!(p.samples.iter().all(|z| z.norm() <= 1e-12));
    }

    #[test]
    fn same_seed_same_path() {
        let grid = TimeGrid::span(2.0, 0.01).unwrap();
        let spec = ou(1.0, 1.0);
        assert_eq!(
            sample_ou_path(&spec, &grid, 99).unwrap().samples,
            sample_ou_path(&spec, &grid, 99).unwrap().samples
        );
        assert_ne!(
            sample_ou_path(&spec, &grid, 99).unwrap().samples,
            sample_ou_path(&spec, &grid, 100).unwrap().samples
        );
        let ms = Arc::new(ModeSumSpec::lorentzian_default(&spec));
        assert_eq!(
            sample_mode_sum_path(&ms, &grid, 5).unwrap().samples,
            sample_mode_sum_path(&ms, &grid, 5).unwrap().samples
        );
    }

    #[test]
    fn single_mode_is_constant() {
        let grid = TimeGrid::span(3.0, 0.1).unwrap();
        let ms = Arc::new(ModeSumSpec::new(vec![(C64::new(1.0, 0.0), 0.0)]).unwrap());
        let p = sample_mode_sum_path(&ms, &grid, 11).unwrap();
        // -i g^* z^* with g = 1: same draw as the generator produces
        let mut rng = rng_from_seed(11);
        let zk = circular_gaussian(&mut rng, 1.0);
        let expected = C64::new(0.0, -1.0) * zk.conj();
        assert!(p.samples.iter().all(|&z| (z - expected).norm() < 1e-15));
    }

    #[test]
    fn empty_mode_list_rejected() {
        assert!(ModeSumSpec::new(vec![]).is_err());
        let grid = TimeGrid::span(1.0, 0.1).unwrap();
        let empty = Arc::new(ModeSumSpec { modes: vec![] });
        assert!(matches!(sample_mode_sum_path(&empty, &grid, 1), Err(QsdError::InvalidSpec(_))));
    }

    #[test]
    fn zero_paths_have_zero_moments() {
        let grid = TimeGrid::span(1.0, 0.5).unwrap();
        let paths = vec![NoisePath::zero(grid); 5];
        let r = noise_statistics(&paths).unwrap();
        assert!(r.mean.iter().all(|z| *z == ZERO));
        assert!(r.covariance.iter().all(|z| *z == ZERO));
        assert!(r.pseudo_covariance.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = NoisePath::zero(TimeGrid::span(1.0, 0.5).unwrap());
        let b = NoisePath::zero(TimeGrid::span(1.0, 0.25).unwrap());
        assert!(matches!(noise_statistics(&[a, b]), Err(QsdError::GridMismatch(_))));
    }

    #[test]
    fn jackknife_matches_textbook_for_variance() {
        // for the mean-corrected second moment the jackknife SE should be
        // close to the plug-in estimate sqrt(var(|z - zbar|^2) / n)
        let grid = TimeGrid::span(0.5, 0.5).unwrap();
        let paths = sample_ou_ensemble(&ou(1.0, 1.0), &grid, 17, 4000).unwrap();
        let r = noise_statistics(&paths).unwrap();
        let (se_re, _) = r.cov_se(0, 0);
        let xs: Vec<f64> = paths.iter().map(|p| p.samples[0].norm_sqr()).collect();
        let mu = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
        let plug = (var / xs.len() as f64).sqrt();
        assert!((se_re / plug - 1.0).abs() < 0.05, "{se_re} vs {plug}");
    }

    #[test]
    fn ou_is_stationary_with_uncorrelated_innovations() {
        let spec = ou(1.0, 1.0);
        let grid = TimeGrid::span(2.0, 0.5).unwrap();
        let paths = sample_ou_ensemble(&spec, &grid, 2024, 20_000).unwrap();
        let r = noise_statistics(&paths).unwrap();
        for a in 0..r.len() {
            assert!(z_score(r.cov(a, a), C64::new(spec.alpha0(), 0.0), r.cov_se(a, a)) < 5.0);
        }
        // residual z*_{k+1} - e^{-gamma D} z*_k against z*_k
        let decay = (-spec.gamma * 0.25f64).exp();
        let resid: Vec<NoisePath> = paths
            .iter()
            .map(|p| {
                let s = (0..p.samples.len() - 1)
                    .map(|j| p.samples[j + 1] - decay * p.samples[j])
                    .chain(std::iter::once(ZERO))
                    .collect();
                NoisePath { samples: s, ..p.clone() }
            })
            .collect();
        for j in 0..grid.sample_count() - 1 {
            let n = paths.len();
            let c = jackknife_cross(n, &|i| paths[i].samples[j].conj(), &|i| resid[i].samples[j]);
            assert!(z_score(c.0, ZERO, c.1) < 5.0, "node {j}: {:?}", c);
        }
    }

    #[test]
    fn standard_errors_scale_with_path_count() {
        let spec = ou(1.0, 1.0);
        let grid = TimeGrid::span(1.0, 0.5).unwrap();
        let few = noise_statistics(&sample_ou_ensemble(&spec, &grid, 5, 10).unwrap()).unwrap();
        let many = noise_statistics(&sample_ou_ensemble(&spec, &grid, 6, 1000).unwrap()).unwrap();
        let avg = |r: &StatReport| r.mean_se.iter().map(|s| s.0 + s.1).sum::<f64>();
        let ratio = avg(&few) / avg(&many);
        // expected sqrt(1000 / 10) = 10
        assert!(ratio > 5.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn mode_sum_residual_is_reported() {
        let spec = ou(1.0, 1.0);
        let ms = ModeSumSpec::lorentzian_default(&spec);
        assert_eq!(ms.count(), 512);
        let r = ms.residual(&spec, 3.0, 300);
        // the [-20 gamma, 20 gamma] window drops ~3% of the spectral weight
        assert!(r > 0.01 && r < 0.02, "{r}");
        assert!((ms.correlation(0.0).re - 0.5 * (2.0 / PI) * 20f64.atan()).abs() < 1e-4);
    }
}
