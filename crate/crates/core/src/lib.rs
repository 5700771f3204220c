//! Maximum-likelihood estimation for probabilistic (noisy) ICA.
//!
//! The observation model is `X = mu0 + sum_j beta^j a_j + sigma * eps` with
//! `p` independent scalar components `beta^j`, a `d x p` decomposition matrix
//! `A = (a_1 .. a_p)` and isotropic Gaussian noise. Eight component
//! distributions are supported (logistic, Laplacian, exponentially scaled
//! Gaussian, Gaussian mixtures, and several censored/ternary variants), all
//! sharing one exponential-family backbone: sufficient statistics, closed-form
//! M-steps and a Metropolis-Hastings-within-Gibbs posterior sampler.
//!
//! Estimation algorithms:
//! - [`estimators::saem_fit`] — stochastic approximation EM driven by a single
//!   MCMC sweep per observation and iteration (the workhorse),
//! - [`estimators::mcem_fit`] — Monte Carlo EM with `m` sweeps per E-step,
//! - [`estimators::ifa_em_fit`] — exact EM for the Gaussian-mixture (IFA)
//!   model, feasible for small `(2K+1)^p`,
//! - [`estimators::famem_fit`] — mode-plugging EM for the logistic model,
//!   kept as a biased-at-high-noise comparison baseline.
//!
//! [`recon`] computes MAP reconstructions of the hidden components for a new
//! observation, and [`eval`] contains the synthetic generators, alignment
//! metrics and the benchmark harness behind the `probica` command-line tool.

pub mod cli;
pub mod dist;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod io;
pub mod model;
pub mod oracle;
pub mod recon;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use model::{Dataset, HiddenState, ModelKind, ModelSpec, Parameters, SuffStats};
