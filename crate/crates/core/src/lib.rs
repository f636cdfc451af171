//! Bayesian vector autoregression with factor stochastic volatility.
//!
//! The error term of a VAR(P) is split into a small number of latent common
//! factors and idiosyncratic shocks, each with its own AR(1) log-volatility:
//!
//! ```text
//! y_t   = B_1 y_{t-1} + ... + B_P y_{t-P} + e_t
//! e_t   = X f_t + eta_t,   f_t ~ N(0, H_t),   eta_t ~ N(0, Omega_t)
//! Sigma_t = X H_t X' + Omega_t
//! ```
//!
//! Coefficients carry a Normal-Gamma global-local shrinkage prior. Posterior
//! simulation is a block Gibbs sampler ([`gibbs::run_chain`]); the
//! [`analysis`] module turns retained draws into the common-volatility path,
//! impulse responses to a scaled factor shock and innovation-variance shares.

pub mod analysis;
pub mod config;
pub mod error;
pub mod factor;
pub mod gibbs;
pub mod ingest;
pub mod model;
pub mod rng;
pub mod shrinkage;
pub mod stats;
pub mod stochvol;
pub mod var;

pub use error::{Error, Result};
pub use model::{ChainState, Dims, ModelSpec, Panel};
