//! Adversarial inverse reinforcement learning on pixel games.
//!
//! The crate bundles a deterministic Catcher clone ([`envs`]), CNN policy and
//! reward networks ([`nets`]), PPO ([`rl`]), a pixel-class autoencoder
//! ([`autoenc`]), the adversarial IRL loop with replay expansion and reward
//! normalisation ([`irl`]), evaluation probes ([`eval`]) and the command-line
//! pipeline ([`pipeline`]).

pub mod autoenc;
pub mod envs;
pub mod error;
pub mod eval;
pub mod irl;
pub mod nets;
pub mod pipeline;
pub mod rl;

pub use error::{Error, Result};
