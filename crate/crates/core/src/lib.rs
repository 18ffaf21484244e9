//! β-Intact-VAE: an identifiable treatment-conditional variational
//! autoencoder for estimating conditional average treatment effects under
//! limited covariate overlap, with the synthetic generators, metrics and
//! experiment harness used to evaluate it.

pub mod dataset;
pub mod dgp;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
