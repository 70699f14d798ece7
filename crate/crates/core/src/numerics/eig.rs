//! Bi-orthonormal eigendecomposition of small non-Hermitian matrices.

use nalgebra::{Schur, SVD};

use super::matrix::{pair, ComplexMatrix, C64, ONE, ZERO};
use crate::error::{QsdError, Result};

/// Default degeneracy tolerance, relative to the spectral diameter.
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;

/// Eigenvalues with matched right eigenvectors `M v = mu v` and left
/// covectors `w M = mu w`, normalised so that `w_mu v_nu = delta`.
///
/// Left covectors are stored as plain rows and paired with right vectors
/// without conjugation.
#[derive(Debug, Clone, PartialEq)]
pub struct BiorthoDecomposition {
    pub eigenvalues: Vec<C64>,
    pub right: Vec<Vec<C64>>,
    pub left: Vec<Vec<C64>>,
    /// Largest deviation from the eigen relations and from bi-orthonormality.
    pub residual: f64,
}

impl BiorthoDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `sum_mu mu |v_mu><w_mu|`
    pub fn reconstruct(&self) -> ComplexMatrix {
        self.weighted_sum(|mu| mu)
    }

    /// `sum_mu |v_mu><w_mu|`, the identity when the basis is complete.
    pub fn completeness(&self) -> ComplexMatrix {
        self.weighted_sum(|_| ONE)
    }

    fn weighted_sum(&self, f: impl Fn(C64) -> C64) -> ComplexMatrix {
        let n = self.dim();
        let mut m = ComplexMatrix::zeros(n);
        for mu in 0..n {
            let s = f(self.eigenvalues[mu]);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += s * self.right[mu][i] * self.left[mu][j];
                }
            }
        }
        m
    }

    /// `max |w_mu v_nu - delta_mu_nu|`
    pub fn biorthonormality_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for mu in 0..n {
            for nu in 0..n {
                let target = if mu == nu { ONE } else { ZERO };
                worst = worst.max((pair(&self.left[mu], &self.right[nu]) - target).norm());
            }
        }
        worst
    }

    /// Index of the largest-magnitude component of each right vector.
    pub fn pivots(&self) -> Vec<usize> {
        self.right.iter().map(|v| argmax_abs(v)).collect()
    }

    /// Reorders the eigenpairs of `self` to continue those of `prev`
    /// (maximal `|w_prev v_new|`) and rescales each right vector so that its
    /// `pivots[mu]` component equals one; left covectors absorb the inverse.
    pub fn aligned_to(mut self, prev: &BiorthoDecomposition, pivots: &[usize]) -> Self {
        let n = self.dim();
        let overlap: Vec<Vec<f64>> = (0..n)
            .map(|mu| {
                (0..n)
                    .map(|nu| pair(&prev.left[mu], &self.right[nu]).norm())
                    .collect()
            })
            .collect();
        let perm = best_assignment(&overlap);
        let eigenvalues = perm.iter().map(|&p| self.eigenvalues[p]).collect();
        let right: Vec<Vec<C64>> = perm.iter().map(|&p| self.right[p].clone()).collect();
        let left: Vec<Vec<C64>> = perm.iter().map(|&p| self.left[p].clone()).collect();
        self.eigenvalues = eigenvalues;
        self.right = right;
        self.left = left;

        for mu in 0..n {
            let v = &self.right[mu];
            let anchor = v[pivots[mu]];
            let largest = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
            // fall back to transporting the previous normalisation if the
            // pivot component has (nearly) vanished
            let s = if anchor.norm() > 1e-10 * largest {
                anchor
            } else {
                pair(&prev.left[mu], v)
            };
            let inv = s.inv();
            self.right[mu].iter_mut().for_each(|z| *z *= inv);
            self.left[mu].iter_mut().for_each(|z| *z *= s);
        }
        self
    }
}

fn argmax_abs(v: &[C64]) -> usize {
    let mut best = 0;
    for (i, z) in v.iter().enumerate() {
        if z.norm() > v[best].norm() * (1.0 + 1e-12) {
            best = i;
        }
    }
    best
}

/// Permutation `perm[mu] = nu` maximising `prod overlap[mu][nu]`.
fn best_assignment(overlap: &[Vec<f64>]) -> Vec<usize> {
    let n = overlap.len();
    if n <= 6 {
        let mut best = (f64::NEG_INFINITY, (0..n).collect::<Vec<_>>());
        let mut perm: Vec<usize> = (0..n).collect();
        permute(&mut perm, 0, &mut |p| {
            let score: f64 = p
                .iter()
                .enumerate()
                .map(|(mu, &nu)| overlap[mu][nu].max(1e-300).ln())
                .sum();
            if score > best.0 {
                best = (score, p.to_vec());
            }
        });
        best.1
    } else {
        let mut used = vec![false; n];
        (0..n)
            .map(|mu| {
                let nu = (0..n)
                    .filter(|&nu| !used[nu])
                    .max_by(|&a, &b| overlap[mu][a].total_cmp(&overlap[mu][b]))
                    .unwrap();
                used[nu] = true;
                nu
            })
            .collect()
    }
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// Diagonalises `m` in a bi-orthonormal basis.
///
/// Eigenvalues come out sorted by real then imaginary part; each right
/// vector has its largest-magnitude component equal to one and the left
/// covectors are the rows of the inverse eigenvector matrix.
pub fn eig_biorthonormal(m: &ComplexMatrix, degeneracy_tol: f64) -> Result<BiorthoDecomposition> {
    let n = m.dim();
    if !m.is_finite() {
        return Err(QsdError::InvalidSpec("matrix has non-finite entries".into()));
    }
    if n == 1 {
        return Ok(BiorthoDecomposition {
            eigenvalues: vec![m[(0, 0)]],
            right: vec![vec![ONE]],
            left: vec![vec![ONE]],
            residual: 0.0,
        });
    }

    let schur = Schur::try_new(m.to_nalgebra(), f64::EPSILON, 10_000)
        .ok_or(QsdError::NotDiagonalizable)?;
    let (q, t) = schur.unpack();
    let mut eigenvalues: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();

    check_degeneracy(m, &eigenvalues, degeneracy_tol)?;

    // right eigenvectors by back substitution on the triangular factor
    let mut right = Vec::with_capacity(n);
    for k in 0..n {
        let mu = t[(k, k)];
        let mut y = vec![ZERO; n];
        y[k] = ONE;
        for j in (0..k).rev() {
            let s: C64 = (j + 1..=k).map(|l| t[(j, l)] * y[l]).sum();
            y[j] = -s / (t[(j, j)] - mu);
        }
        let mut v = vec![ZERO; n];
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = (0..n).map(|l| q[(i, l)] * y[l]).sum();
        }
        let anchor = v[argmax_abs(&v)];
        v.iter_mut().for_each(|z| *z /= anchor);
        right.push(v);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigenvalues[a]
            .re
            .total_cmp(&eigenvalues[b].re)
            .then(eigenvalues[a].im.total_cmp(&eigenvalues[b].im))
    });
    eigenvalues = order.iter().map(|&i| eigenvalues[i]).collect();
    let right: Vec<Vec<C64>> = order.iter().map(|&i| right[i].clone()).collect();

    let mut vmat = ComplexMatrix::zeros(n);
    for (mu, v) in right.iter().enumerate() {
        for i in 0..n {
            vmat[(i, mu)] = v[i];
        }
    }
    let w = vmat.inverse().ok_or(QsdError::NotDiagonalizable)?;
    let left: Vec<Vec<C64>> = (0..n).map(|mu| (0..n).map(|j| w[(mu, j)]).collect()).collect();

    let mut dec = BiorthoDecomposition {
        eigenvalues,
        right,
        left,
        residual: 0.0,
    };
    dec.residual = residual(m, &dec);
    Ok(dec)
}

fn check_degeneracy(m: &ComplexMatrix, eigenvalues: &[C64], tol: f64) -> Result<()> {
    let n = eigenvalues.len();
    let mut diameter = 0.0f64;
    let mut largest = 0.0f64;
    for i in 0..n {
        largest = largest.max(eigenvalues[i].norm());
        for j in i + 1..n {
            diameter = diameter.max((eigenvalues[i] - eigenvalues[j]).norm());
        }
    }
    let scale = if diameter > 0.0 { diameter } else { largest.max(m.max_abs()) };
    let threshold = tol * scale;
    for i in 0..n {
        for j in i + 1..n {
            let gap = (eigenvalues[i] - eigenvalues[j]).norm();
            if gap <= threshold {
                let cluster: Vec<usize> = (0..n)
                    .filter(|&k| (eigenvalues[k] - eigenvalues[i]).norm() <= threshold)
                    .collect();
                let centre = cluster.iter().map(|&k| eigenvalues[k]).sum::<C64>()
                    / cluster.len() as f64;
                let shifted = m.to_nalgebra() - nalgebra::DMatrix::<C64>::identity(n, n) * centre;
                let sv = SVD::new(shifted, false, false).singular_values;
                let cut = 1e-8 * m.max_abs().max(1.0);
                let nullity = sv.iter().filter(|&&s| s <= cut).count();
                if nullity < cluster.len() {
                    return Err(QsdError::NotDiagonalizable);
                }
                return Err(QsdError::DegenerateSpectrum { i, j, gap });
            }
        }
    }
    Ok(())
}

pub(crate) fn residual(m: &ComplexMatrix, dec: &BiorthoDecomposition) -> f64 {
    let mut worst = dec.biorthonormality_defect();
    for mu in 0..dec.dim() {
        let lam = dec.eigenvalues[mu];
        let mv = m.matvec(&dec.right[mu]);
        let wm = m.vecmat(&dec.left[mu]);
        for i in 0..dec.dim() {
            worst = worst
                .max((mv[i] - lam * dec.right[mu][i]).norm())
                .max((wm[i] - lam * dec.left[mu][i]).norm());
        }
    }
    worst
}
