//! Trajectories, dynamical invariants and Monte Carlo ensembles for the
//! linear non-Markovian quantum state diffusion equation
//!
//! ```text
//! d/dt psi = (-i H_s + L z*_t - L^dagger Obar(t)) psi = -i H_eff(t) psi
//! ```
//!
//! driven by complex Gaussian noise with an Ornstein-Uhlenbeck bath
//! correlation function.

pub mod error;
pub mod numerics;

pub use error::{QsdError, Result};
pub mod noise;
pub mod reduce;
pub mod rng;
pub mod models;
pub mod qsd;
pub mod invariants;
pub mod ensemble;
pub mod acceptance;
