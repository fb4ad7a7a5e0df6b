//! Cross-modal residual fusion for audio-visual navigation on a grid world.
//!
//! The crate bundles a small reverse-mode differentiation engine, the grid
//! simulator, the fusion network and its baselines, a recurrent
//! actor-critic trained with PPO, the SR/SPL/SNA metrics, and scripted
//! comparison agents.

pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod ppo;

pub use error::{Error, Result};
