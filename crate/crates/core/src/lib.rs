//! Bayesian site-occupancy models whose spatial term is learned by an
//! embedded regressor (regression tree, support vector regression, low-rank
//! Gaussian process or Gaussian Markov random field), together with
//! out-of-sample scoring and Moran's I diagnostics.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod learners;
pub mod model;
pub mod sampler;
pub mod scoring;
pub mod synthgen;

pub use error::{Error, Result};
