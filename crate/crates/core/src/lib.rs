//! Hierarchical reinforcement-learning recommender and the synthetic
//! environment it is evaluated in.
//!
//! A session-level actor proposes a latent goal at the start of every session
//! of `L` interactions; an interaction-level dueling Q-network conditioned on
//! that goal picks one item per step. The simulator draws users with a fixed
//! intrinsic novelty-seeking level plus a fresh per-session fluctuation, so the
//! learned goals can be compared against ground truth.

pub mod agent;
pub mod baselines;
pub mod encoder;
pub mod env;
mod error;
pub mod harness;
pub mod io;
pub mod nn;
pub mod reward;
pub mod rng;

pub use error::{Error, Result};
