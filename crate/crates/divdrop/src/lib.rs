//! Diversified dropout-mask sampling for neural-network uncertainty estimation.
//!
//! A trained dropout network is an implicit ensemble indexed by its masks.
//! Instead of drawing masks i.i.d. Bernoulli (MC dropout), this crate
//! estimates the correlation structure of the neurons in each dropout layer
//! and draws masks from distributions that favour diverse neuron subsets:
//! independent leverage-score sampling, determinantal point processes (DPP)
//! and fixed-size k-DPPs. Masked forward passes are reweighted with the
//! Horvitz-Thompson estimator so layer-wise means stay unbiased, and the
//! spread of the stochastic outputs yields the uncertainty estimate.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: dense symmetric eigendecomposition (cyclic Jacobi),
//!   elementary symmetric polynomials, PSD projection, seedable RNG streams.
//! - [`network`]: dropout MLP with deterministic and Horvitz-Thompson masked
//!   forward passes, plus a from-scratch Adam trainer with early stopping.
//! - [`kernels`]: neuron correlation / covariance kernels estimated from
//!   captured activations.
//! - [`samplers`]: Bernoulli, leverage-score, DPP and k-DPP mask banks with
//!   exact marginal inclusion probabilities.
//! - [`uncertainty`]: mean/variance, Gaussian log-likelihood, BALD, entropy,
//!   max-probability and variation-ratio reductions over stochastic passes.
//! - [`evaluation`]: datasets, splits, OOD construction and the experiment
//!   protocols (log-likelihood sweeps, OOD percentile tables, UE-accuracy
//!   and count-vs-uncertainty curves).

pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod network;
pub mod numerics;
pub mod samplers;
pub mod uncertainty;

pub use error::{Error, Result};
