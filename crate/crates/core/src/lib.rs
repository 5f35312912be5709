//! Continuous-time magnetometry with a monitored, collectively dephasing spin
//! ensemble: Gaussian filtering, Fisher information bounds, simulated
//! photocurrents, Bayesian field estimation and a finite-spin reference engine.

pub mod bayes;
pub mod config;
pub mod error;
pub mod filter;
pub mod information;
pub mod model;
pub mod ode;
pub mod spin;
pub mod trajectories;
pub mod verify;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{ModelParams, TimeGrid};
