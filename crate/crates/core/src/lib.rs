//! Latent annual publication-rate estimation from five overlapping
//! bibliographic count series, and title-word author-gender classification.
//!
//! The rate model is a log-linear Gaussian process observed through
//! location/dispersion negative binomial likelihoods; it is fitted with
//! Hamiltonian Monte Carlo (see [`sampler`]). The classifier is an L2
//! logistic regression over title-word counts, evaluated by exact
//! leave-one-out (see [`classify`]).

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod cli;
pub mod dist;
pub mod early_gender;
pub mod elicit;
pub mod error;
pub mod gp;
pub mod gradient;
pub mod ingest;
pub mod model;
pub mod report;
pub mod sampler;

pub use error::{Error, Result};
