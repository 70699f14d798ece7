//! Monte Carlo reconstruction of the reduced density matrix
//! `rho(t) = M[U_z(t) rho_0 U_z(t)^dagger]` from unnormalised trajectories.
//!
//! Paths are split into a fixed number of contiguous batches. Each batch
//! is summed sequentially in path order and batches are combined with a
//! fixed pairwise tree, so results do not depend on the worker count.
//! Batch means also provide the standard errors.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{QsdError, Result};
use crate::invariants::{analytic_propagator, model_invariant};
use crate::models::{ModelCoefficients, ModelSpec};
use crate::noise::{sample_ou_path, NoisePath};
use crate::numerics::{inner, ComplexMatrix, TimeGrid, C64, ZERO};
use crate::qsd::{noise_free_part, EffectiveHamiltonianFrame, Method};
use crate::reduce::pairwise_reduce;
use crate::rng::{rng_from_seed, split_seed};

/// Environment variable capping the number of worker threads (0 = auto).
pub const THREADS_ENV: &str = "QSDLAB_THREADS";

/// Default number of batches for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 32;

#[derive(Debug, Clone, Default)]
pub struct EnsembleOptions {
    /// Pure target state for fidelity columns.
    pub target: Option<Vec<C64>>,
    /// Worker threads; `None` reads `QSDLAB_THREADS`, `Some(0)` means all cores.
    pub threads: Option<usize>,
    /// Number of batches (clamped to `[2, n_paths]`); 0 selects the default.
    pub batches: usize,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub grid: TimeGrid,
    /// Raw average `M[|psi><psi|]` at the full nodes (not trace-normalised).
    pub rho: Vec<ComplexMatrix>,
    pub n_paths: usize,
    pub master_seed: u64,
    pub method: Method,
    pub target: Option<Vec<C64>>,
    /// `<psi_T|rho/Tr rho|psi_T>`
    pub fidelity: Option<Vec<f64>>,
    /// Batch-means standard error of `fidelity`.
    pub fidelity_stderr: Option<Vec<f64>>,
    /// `Tr (rho/Tr rho)^2`
    pub purity: Vec<f64>,
    pub trace: Vec<C64>,
    /// Batch-means standard error of `Re Tr rho`.
    pub trace_stderr: Vec<f64>,
}

impl EnsembleResult {
    /// Standard error of the fidelity when a target was given, otherwise of
    /// the trace.
    pub fn stderr(&self) -> &[f64] {
        self.fidelity_stderr.as_deref().unwrap_or(&self.trace_stderr)
    }

    pub fn max_hermiticity_defect(&self) -> f64 {
        self.rho.iter().map(|r| r.hermiticity_defect()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.rho
            .iter()
            .map(|r| r.min_hermitian_eigenvalue())
            .fold(f64::INFINITY, f64::min)
    }

    /// `max_t |Tr rho(t) - 1|`
    pub fn max_trace_error(&self) -> f64 {
        self.trace.iter().map(|t| (t - 1.0).norm()).fold(0.0, f64::max)
    }

    /// Largest decrease of the fidelity between any earlier and later node,
    /// in units of the combined standard error. Non-decreasing within
    /// `k` standard errors means the returned value is at most `k`.
    pub fn fidelity_decrease_in_stderr(&self) -> Option<f64> {
        let f = self.fidelity.as_ref()?;
        let se = self.fidelity_stderr.as_ref()?;
        let mut worst = f64::NEG_INFINITY;
        for s in 0..f.len() {
            for t in s + 1..f.len() {
                let drop = f[s] - f[t];
                if drop > 0.0 {
                    let sigma = (se[s] * se[s] + se[t] * se[t]).sqrt();
                    let z = if sigma > 0.0 { drop / sigma } else { f64::INFINITY };
                    worst = worst.max(z);
                }
            }
        }
        Some(worst.max(0.0))
    }
}

/// Checks Hermiticity, unit trace and positivity within `1e-9`.
pub fn validate_density(rho: &ComplexMatrix) -> Result<()> {
    let tol = 1e-9;
    if !rho.is_finite() {
        return Err(QsdError::InvalidDensity("non-finite entries".into()));
    }
    if !rho.is_hermitian(tol) {
        return Err(QsdError::InvalidDensity(format!(
            "not Hermitian (defect {:e})",
            rho.hermiticity_defect()
        )));
    }
    let tr = rho.trace();
    if (tr - 1.0).norm() > tol {
        return Err(QsdError::InvalidDensity(format!("trace {tr} != 1")));
    }
    let min = rho.min_hermitian_eigenvalue();
    if min < -tol {
        return Err(QsdError::InvalidDensity(format!("negative eigenvalue {min:e}")));
    }
    Ok(())
}

/// `|psi><psi| / <psi|psi>`
pub fn pure_density(psi: &[C64]) -> ComplexMatrix {
    let n = inner(psi, psi).re;
    ComplexMatrix::outer(psi, psi).scale(C64::from(1.0 / n))
}

/// `A A^dagger / Tr(A A^dagger)` with a complex Gaussian `d x d` matrix `A`
/// drawn from `seed`.
pub fn random_mixed_state(dim: usize, seed: u64) -> ComplexMatrix {
    let mut rng = rng_from_seed(seed);
    let data: Vec<C64> = (0..dim * dim)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im)
        })
        .collect();
    let a = ComplexMatrix::from_vec(dim, data).expect("square");
    let aa = outer_sum(&a);
    let tr = aa.trace().re;
    aa.scale(C64::from(1.0 / tr))
}

/// `W W^dagger` evaluated entrywise as `sum_k W_ik conj(W_jk)`, which is
/// Hermitian to the last bit.
fn outer_sum(w: &ComplexMatrix) -> ComplexMatrix {
    let d = w.dim();
    let mut out = ComplexMatrix::zeros(d);
    accumulate_outer(w.as_slice(), d, d, out.as_mut_slice());
    out
}

/// `acc += W W^dagger` for a row-major `d x r` block `w`.
fn accumulate_outer(w: &[C64], d: usize, r: usize, acc: &mut [C64]) {
    for i in 0..d {
        for j in 0..d {
            let mut s = ZERO;
            for k in 0..r {
                s += w[i * r + k] * w[j * r + k].conj();
            }
            acc[i * d + j] += s;
        }
    }
}

/// `rho = B B^dagger` with the columns of `B` the eigenvectors scaled by
/// the square roots of the nonzero eigenvalues. Returns `B` row-major
/// together with its column count.
fn density_factor(rho: &ComplexMatrix) -> (Vec<C64>, usize) {
    let d = rho.dim();
    let (vals, vecs) = rho.hermitian_eigen();
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..d).filter(|&k| vals[k] > 1e-14 * top).collect();
    let r = keep.len();
    let mut b = vec![ZERO; d * r];
    for (c, &k) in keep.iter().enumerate() {
        let s = vals[k].sqrt();
        for i in 0..d {
            b[i * r + c] = vecs[(i, k)] * s;
        }
    }
    (b, r)
}

pub fn worker_count(requested: Option<usize>) -> usize {
    let n = requested.unwrap_or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(0)
    });
    if n == 0 {
        std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
    } else {
        n
    }
}

struct Shared {
    coeffs: ModelCoefficients,
    base: Arc<Vec<C64>>,
}

/// `rho(t)` over `n_paths` OU noise realisations with seeds
/// `split_seed(master_seed, index)`.
pub fn run_ensemble(
    model: &ModelSpec,
    rho0: &ComplexMatrix,
    n_paths: usize,
    master_seed: u64,
    grid: &TimeGrid,
    method: Method,
) -> Result<EnsembleResult> {
    run_ensemble_with(model, rho0, n_paths, master_seed, grid, method, &EnsembleOptions::default())
}

pub fn run_ensemble_with(
    model: &ModelSpec,
    rho0: &ComplexMatrix,
    n_paths: usize,
    master_seed: u64,
    grid: &TimeGrid,
    method: Method,
    options: &EnsembleOptions,
) -> Result<EnsembleResult> {
    if n_paths < 2 {
        return Err(QsdError::InvalidSpec("an ensemble needs at least two paths".into()));
    }
    if rho0.dim() != model.dim {
        return Err(QsdError::DimensionMismatch { expected: model.dim, got: rho0.dim() });
    }
    validate_density(rho0)?;
    if let Some(t) = &options.target {
        if t.len() != model.dim {
            return Err(QsdError::DimensionMismatch { expected: model.dim, got: t.len() });
        }
        check_target(t)?;
    }
    grid.require_half_steps()?;

    let d = model.dim;
    let (b, r) = density_factor(rho0);
    let shared = if model.noise_dependent_o {
        None
    } else {
        let coeffs = model.solve_coefficients(&NoisePath::zero(*grid))?;
        let base = noise_free_part(model, &coeffs);
        Some(Shared { coeffs, base })
    };

    let batches = match options.batches {
        0 => DEFAULT_BATCHES,
        b => b,
    }
    .clamp(2, n_paths);
    let bounds: Vec<(usize, usize)> = (0..batches)
        .map(|k| (k * n_paths / batches, (k + 1) * n_paths / batches))
        .collect();
    let nodes = grid.node_count();

    let run_batch = |&(lo, hi): &(usize, usize)| -> Result<Vec<ComplexMatrix>> {
        let mut acc = vec![ComplexMatrix::zeros(d); nodes];
        for index in lo..hi {
            let seed = split_seed(master_seed, index as u64);
            let mut path = || -> Result<()> {
                let noise = sample_ou_path(&model.correlation, grid, seed)?;
                let (frame, own);
                let coeffs = match &shared {
                    Some(s) => {
                        frame = EffectiveHamiltonianFrame::from_parts(model, s.base.clone(), &noise)?;
                        &s.coeffs
                    }
                    None => {
                        own = model.solve_coefficients(&noise)?;
                        frame = EffectiveHamiltonianFrame::from_parts(
                            model,
                            noise_free_part(model, &own),
                            &noise,
                        )?;
                        &own
                    }
                };
                let mut w = vec![ZERO; d * r];
                match method {
                    Method::Numeric => {
                        let mut cols = Vec::with_capacity(r);
                        for c in 0..r {
                            let col: Vec<C64> = (0..d).map(|i| b[i * r + c]).collect();
                            cols.push(frame.evolve(&col, false)?);
                        }
                        for (k, a) in acc.iter_mut().enumerate() {
                            for (c, s) in cols.iter().enumerate() {
                                let v = s.get(2 * k);
                                for i in 0..d {
                                    w[i * r + c] = v[i];
                                }
                            }
                            accumulate_outer(&w, d, r, a.as_mut_slice());
                        }
                    }
                    Method::Analytic => {
                        let inv = model_invariant(&frame, model, &noise, &coeffs.coefficients)?;
                        let u = analytic_propagator(&frame, &inv)?;
                        for (k, a) in acc.iter_mut().enumerate() {
                            let uk = u[k].as_slice();
                            for i in 0..d {
                                for c in 0..r {
                                    w[i * r + c] = (0..d).map(|l| uk[i * d + l] * b[l * r + c]).sum();
                                }
                            }
                            if !w.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                                return Err(QsdError::NumericalBlowup { time: grid.time(k) });
                            }
                            accumulate_outer(&w, d, r, a.as_mut_slice());
                        }
                    }
                }
                Ok(())
            };
            path().map_err(|e| match e {
                QsdError::NumericalBlowup { time } => QsdError::PathBlowup { time, seed },
                other => other,
            })?;
        }
        Ok(acc)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(options.threads))
        .build()
        .map_err(|e| QsdError::InvalidSpec(format!("thread pool: {e}")))?;
    let sums: Vec<Vec<ComplexMatrix>> =
        pool.install(|| bounds.par_iter().map(run_batch).collect::<Result<Vec<_>>>())?;

    let batch_means: Vec<Vec<ComplexMatrix>> = sums
        .iter()
        .zip(&bounds)
        .map(|(s, &(lo, hi))| {
            let w = C64::from(1.0 / (hi - lo) as f64);
            s.iter().map(|m| m.scale(w)).collect()
        })
        .collect();
    let total = pairwise_reduce(sums, &|a: Vec<ComplexMatrix>, b: Vec<ComplexMatrix>| {
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    })
    .expect("at least one batch");
    let inv_n = C64::from(1.0 / n_paths as f64);
    let rho: Vec<ComplexMatrix> = total.iter().map(|m| m.scale(inv_n)).collect();

    let trace: Vec<C64> = rho.iter().map(|m| m.trace()).collect();
    let purity = rho.iter().map(|m| purity(m)).collect::<Result<Vec<_>>>()?;
    let trace_stderr = batch_stderr(&batch_means, nodes, |m| Ok(m.trace().re))?;
    let (fidelity, fidelity_stderr) = match &options.target {
        Some(t) => (
            Some(rho.iter().map(|m| fidelity(m, t)).collect::<Result<Vec<_>>>()?),
            Some(batch_stderr(&batch_means, nodes, |m| fidelity(m, t))?),
        ),
        None => (None, None),
    };

    Ok(EnsembleResult {
        grid: *grid,
        rho,
        n_paths,
        master_seed,
        method,
        target: options.target.clone(),
        fidelity,
        fidelity_stderr,
        purity,
        trace,
        trace_stderr,
    })
}

fn batch_stderr<F>(batch_means: &[Vec<ComplexMatrix>], nodes: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&ComplexMatrix) -> Result<f64>,
{
    let nb = batch_means.len() as f64;
    (0..nodes)
        .map(|k| {
            let xs = batch_means.iter().map(|b| f(&b[k])).collect::<Result<Vec<_>>>()?;
            let mean = xs.iter().sum::<f64>() / nb;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            Ok((var / nb).sqrt())
        })
        .collect()
}

fn check_target(psi: &[C64]) -> Result<()> {
    let n = inner(psi, psi).re;
    if (n - 1.0).abs() > 1e-9 {
        return Err(QsdError::InvalidSpec(format!("target state not normalised (norm^2 = {n})")));
    }
    Ok(())
}

fn normalised_trace(rho: &ComplexMatrix) -> Result<f64> {
    let tr = rho.trace();
    if !(tr.re > 0.0) {
        return Err(QsdError::InvalidDensity(format!("trace {tr} is not positive")));
    }
    Ok(tr.re)
}

/// `<psi_T|rho|psi_T> / Tr rho`
pub fn fidelity(rho: &ComplexMatrix, psi_t: &[C64]) -> Result<f64> {
    let tr = normalised_trace(rho)?;
    check_target(psi_t)?;
    Ok(inner(psi_t, &rho.matvec(psi_t)).re / tr)
}

/// `Tr rho^2 / (Tr rho)^2`
pub fn purity(rho: &ComplexMatrix) -> Result<f64> {
    let tr = normalised_trace(rho)?;
    Ok((rho * rho).trace().re / (tr * tr))
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub n_small: usize,
    pub n_large: usize,
    /// `max_t ||rho_large(t) - rho_small(t)||_F`
    pub max_deviation: f64,
    /// Expected Monte Carlo scale `1/sqrt(n_small)`.
    pub expected_scale: f64,
}

/// Compares two ensembles whose seed sets are nested (same master seed,
/// the smaller run using the first `n_small` paths of the larger).
pub fn convergence_report(small: &EnsembleResult, large: &EnsembleResult) -> Result<ConvergenceReport> {
    small.grid.ensure_same(&large.grid, "ensemble comparison")?;
    if small.master_seed != large.master_seed || small.n_paths > large.n_paths {
        return Err(QsdError::InvalidSpec(
            "convergence report needs nested seed sets (same master seed, n_small <= n_large)".into(),
        ));
    }
    Ok(ConvergenceReport {
        n_small: small.n_paths,
        n_large: large.n_paths,
        max_deviation: max_rho_deviation(small, large)?,
        expected_scale: 1.0 / (small.n_paths as f64).sqrt(),
    })
}

/// `max_t ||rho_a(t) - rho_b(t)||_F`
pub fn max_rho_deviation(a: &EnsembleResult, b: &EnsembleResult) -> Result<f64> {
    a.grid.ensure_same(&b.grid, "ensemble comparison")?;
    Ok(a.rho
        .iter()
        .zip(&b.rho)
        .map(|(x, y)| (x - y).frobenius_norm())
        .fold(0.0, f64::max))
}
