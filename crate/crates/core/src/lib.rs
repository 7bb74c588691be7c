//! Continuous per-entity embedding size search for latent-factor
//! recommenders.
//!
//! A TD3 actor-critic proposes an embedding size in `[1, d_max]` for every
//! user and item, a random walk over nearby sizes lets the critic pick among
//! mutations of that proposal, and the best assignments found under each
//! sparsity budget are retrained to convergence.

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod explore;
pub mod metrics;
pub mod nn;
pub mod recommender;
pub mod rng;
pub mod rundir;
pub mod search;
pub mod td3;

pub use error::{Error, Result};
