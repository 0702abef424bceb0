//! Gaussian-process surrogates with Matérn kernels, evaluated with adaptive
//! cross-conformal prediction intervals (J+GP, J-minmax-GP) next to Bayesian
//! credibility intervals and the classical Jackknife family.

pub mod bench;
pub mod conformal;
pub mod data_io;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod kernels;
pub mod loo;
pub mod metrics;
pub mod optim;
mod par;
pub mod stats;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
