//! Bayesian estimation of monotone, concave stochastic production frontiers.
//!
//! The frontier is a minimum of hyperplanes whose number is explored by a
//! reversible-jump chain; inefficiency terms, the inefficiency scale and
//! optional time and contextual effects are sampled jointly in one stage.

pub mod artifact;
pub mod data;
pub mod economics;
pub mod error;
pub mod estimator;
pub mod fitter;
pub mod frontier;
pub mod rjmcmc;
pub mod samplers;
pub mod sim;

pub use error::{Error, Result};
