use thiserror::Error;

/// Errors raised by the solvers, samplers and ensemble drivers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QsdError {
    #[error("numerical blowup at t = {time}")]
    NumericalBlowup { time: f64 },
    #[error("numerical blowup at t = {time} on path seed {seed:#018x}")]
    PathBlowup { time: f64, seed: u64 },
    #[error("degenerate spectrum: |mu_{i} - mu_{j}| = {gap:e} below tolerance")]
    DegenerateSpectrum { i: usize, j: usize, gap: f64 },
    #[error("matrix is not diagonalizable")]
    NotDiagonalizable,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, QsdError>;
