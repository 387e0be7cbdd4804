//! Simulation and limit oracles for infinite-server queues fed by a Cox
//! arrival stream whose intensity is modulated by a fast Markov environment.
//!
//! - [`env`]: finite-state environments, paths, ergodic constants
//! - [`service`]: heavy-tailed service law
//! - [`arrivals`]: the Cox stream and its conditional mean measure
//! - [`queue`]: point measure, number in system, region counts
//! - [`analytics`]: deterministic limit quantities and rescalings
//! - [`experiments`]: quenched and annealed Monte Carlo harnesses

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod arrivals;
pub mod env;
pub mod error;
pub mod experiments;
pub mod quad;
pub mod queue;
pub mod rng;
pub mod service;
pub mod stats;

pub use error::{Error, Result};
