//! Batch policy optimization with a nonparametric off-policy policy
//! gradient.
//!
//! The toolkit fits Gaussian-kernel models of reward and dynamics from a
//! fixed transition dataset, solves the resulting nonparametric Bellman
//! equation in closed form with sparse conjugate-gradient solves, computes
//! the exact gradient of the estimated return and optimizes neural
//! policies fully offline. Ground-truth verification runs against a
//! closed-form linear-quadratic task; pendulum, cart-pole and mountain-car
//! provide desk-scale benchmarks.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod baselines;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod kernel;
pub mod nopg;
pub mod npbe;
pub mod policy;

pub use error::{Error, Result};
