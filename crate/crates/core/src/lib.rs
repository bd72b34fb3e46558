//! Least-squares estimation of FARIMA(p, d, q) models with uncorrelated but
//! possibly dependent innovations, with inference that stays valid in that
//! setting: a sandwich covariance built from an autoregressive spectral
//! estimate, and self-normalized confidence regions.

pub mod error;
pub mod filter;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod lse;
pub mod model;
pub mod rng;
pub mod selfnorm;
pub mod series;
pub mod simulate;

pub use error::{FarimaError, Result};
pub use model::{check_feasible, residuals, residuals_with_grad, FarimaParams, FeasibleRegion, ResidualSet};
pub use simulate::{gen_noise, simulate_farima, NoiseKind, SimConfig, SimPath};
