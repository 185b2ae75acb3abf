//! Bayesian and likelihood inference for beta mixed regression models.
//!
//! The crate is organised by engine:
//!
//! * [`dist`]: densities, special functions, t quantiles;
//! * [`prior`]: default priors and range-based Gamma elicitation;
//! * [`model`]: datasets, design matrices and the joint log posterior;
//! * [`laplace`]: nested Laplace approximation over a hyperparameter grid;
//! * [`mcmc`]: adaptive Metropolis-within-Gibbs sampler;
//! * [`likelihood`]: maximum likelihood and profile intervals;
//! * [`selection`]: DIC, log marginal likelihood, CPO and model tables;
//! * [`sensitivity`]: Hellinger distances and prior-sensitivity scans;
//! * [`io`]: CSV ingestion, synthetic data, configuration and output writers.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod error;
pub mod io;
pub mod laplace;
pub mod likelihood;
pub mod marginal;
pub mod mcmc;
pub mod model;
pub mod optim;
pub mod prior;
pub mod quad;
pub mod selection;
pub mod sensitivity;

pub use error::{Error, Result};
