//! Online change-point detection for multivariate inhomogeneous Poisson
//! point process time series.

pub mod baselines;
pub mod calibration;
pub mod config;
pub mod detector;
pub mod embedding;
pub mod events;
pub mod error;
pub mod harness;
pub mod legendre;
pub mod lowrank;
pub mod sim;

pub use error::{Error, Result};
