//! Dense complex square matrices sized for few-level systems.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{QsdError, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Row-major dense `dim x dim` complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(QsdError::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    /// Builds a matrix from rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[C64]>>(rows: &[R]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), dim, "ragged matrix rows");
            data.extend_from_slice(r);
        }
        Self { dim, data }
    }

    pub fn from_real_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn diagonal(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    /// `|u><v|` with the bra conjugated.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        assert_eq!(u.len(), v.len());
        let dim = u.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = u[i] * v[j].conj();
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.dim];
        self.matvec_into(v, &mut out);
        out
    }

    #[inline]
    pub fn matvec_into(&self, v: &[C64], out: &mut [C64]) {
        let n = self.dim;
        debug_assert_eq!(v.len(), n);
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let row = &self.data[i * n..(i + 1) * n];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// Row covector times matrix, `w M`, without conjugation.
    pub fn vecmat(&self, w: &[C64]) -> Vec<C64> {
        let n = self.dim;
        let mut out = vec![ZERO; n];
        for (i, &wi) in w.iter().enumerate() {
            for j in 0..n {
                out[j] += wi * self[(i, j)];
            }
        }
        out
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// True iff `max |M - M^dagger| <= tol`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Gauss-Jordan inverse with partial pivoting; `None` when singular.
    pub fn inverse(&self) -> Option<Self> {
        let n = self.dim;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| a[(r, col)].norm().total_cmp(&a[(s, col)].norm()))
                .unwrap();
            if a[(pivot, col)].norm() <= 1e-14 * scale {
                return None;
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                    inv.data.swap(pivot * n + j, col * n + j);
                }
            }
            let p = a[(col, col)].inv();
            for j in 0..n {
                a[(col, j)] *= p;
                inv[(col, j)] *= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f == ZERO {
                    continue;
                }
                for j in 0..n {
                    let (acj, icj) = (a[(col, j)], inv[(col, j)]);
                    a[(r, j)] -= f * acj;
                    inv[(r, j)] -= f * icj;
                }
            }
        }
        Some(inv)
    }

    /// Determinant by LU with partial pivoting.
    pub fn determinant(&self) -> C64 {
        let n = self.dim;
        let mut a = self.clone();
        let mut det = ONE;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| a[(r, col)].norm().total_cmp(&a[(s, col)].norm()))
                .unwrap();
            if a[(pivot, col)] == ZERO {
                return ZERO;
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                }
                det = -det;
            }
            let p = a[(col, col)];
            det *= p;
            for r in col + 1..n {
                let f = a[(r, col)] / p;
                for j in col..n {
                    let acj = a[(col, j)];
                    a[(r, j)] -= f * acj;
                }
            }
        }
        det
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<C64> {
        nalgebra::DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &nalgebra::DMatrix<C64>) -> Self {
        let n = m.nrows();
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }

    /// Eigenvalues (ascending) and unitary eigenvector matrix (columns) of
    /// the Hermitian part `(M + M^dagger)/2`.
    pub fn hermitian_eigen(&self) -> (Vec<f64>, ComplexMatrix) {
        let h = (self.to_nalgebra() + self.to_nalgebra().adjoint()) * C64::from(0.5);
        let eig = nalgebra::SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = Self::from_nalgebra(&eig.eigenvectors);
        let mut sorted = Self::zeros(self.dim);
        for (c, &i) in order.iter().enumerate() {
            for r in 0..self.dim {
                sorted[(r, c)] = vecs[(r, i)];
            }
        }
        (vals, sorted)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_hermitian_eigenvalue(&self) -> f64 {
        self.hermitian_eigen().0[0]
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        let mut out = ComplexMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale(-ONE)
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{})[", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Pauli matrices and ladder operators in the `{|0>, |1>}` basis with
/// `sigma_z = diag(1, -1)`.
pub mod pauli {
    use super::{ComplexMatrix, C64};

    pub fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[[0.0, 1.0], [1.0, 0.0]])
    }

    pub fn sigma_y() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[
            [C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
            [C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
        ])
    }

    pub fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[[1.0, 0.0], [0.0, -1.0]])
    }

    /// `|1><0|`: lowers the `sigma_z = +1` state.
    pub fn sigma_minus() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[[0.0, 0.0], [1.0, 0.0]])
    }

    /// `|0><1|`
    pub fn sigma_plus() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[[0.0, 1.0], [0.0, 0.0]])
    }
}

/// `<u|v>` with `u` conjugated.
pub fn inner(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// Bilinear pairing `w v` of a covector with a vector (no conjugation).
pub fn pair(w: &[C64], v: &[C64]) -> C64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs_diff(u: &[C64], v: &[C64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

/// `exp(M)` by scaling and squaring with a Taylor kernel; intended for
/// reference solutions on small matrices.
pub fn expm(m: &ComplexMatrix) -> ComplexMatrix {
    let norm = m.max_abs() * m.dim() as f64;
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let a = m.scale(C64::new(0.5f64.powi(squarings as i32), 0.0));
    let mut term = ComplexMatrix::identity(m.dim());
    let mut sum = term.clone();
    for k in 1..=30 {
        term = (&term * &a).scale(C64::new(1.0 / k as f64, 0.0));
        sum = &sum + &term;
        if term.max_abs() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}
