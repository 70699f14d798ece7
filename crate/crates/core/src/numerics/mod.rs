//! Small dense complex linear algebra, fixed-step integration and
//! bi-orthonormal eigendecomposition.

pub mod eig;
pub mod grid;
pub mod matrix;
pub mod ode;
pub mod series;

pub use eig::{eig_biorthonormal, BiorthoDecomposition, DEFAULT_DEGENERACY_TOL};
pub use grid::TimeGrid;
pub use matrix::{expm, inner, norm, pair, pauli, ComplexMatrix, C64, I, ONE, ZERO};
pub use ode::{
    central_difference, cumulative_exp_integral, rk4_integrate, rk4_integrate_guarded,
    simpson_cumulative, Sample,
};
pub use series::StateSeries;
