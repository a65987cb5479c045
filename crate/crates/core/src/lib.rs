#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Continuous-state offset-dynamics reinforcement learning.
//!
//! The crate is organised around the learning loop:
//!
//! - [`types`]: states, actions, terrain types, Gaussian dynamics and the MDP description.
//! - [`estimation`]: per (type, action) experience and maximum-likelihood offset models.
//! - [`planner`]: fitted value iteration over a calibrated Gaussian kernel grid.
//! - [`agent`]: the optimistic learner that plans against its known-tuple model.
//! - [`sim`]: a typed-terrain world that samples offset dynamics and runs episodes.
//! - [`bounds`]: sample-complexity and model-distance calculators with numeric oracles.
//! - [`experiment`]: seeded experiment runs, baselines and file output for the CLI.

pub mod agent;
pub mod bounds;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod planner;
pub mod sim;
pub mod types;

pub use error::{CorlError, Result};
