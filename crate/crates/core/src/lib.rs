//! Sampling by stochastic localization with iterative posterior sampling.
//!
//! The observation process `Y_t = alpha(t) X + sigma W_t` is integrated along
//! a signal-to-noise adapted grid while the denoiser `E[X | Y_t]` is estimated
//! by Langevin chains on the posterior.

pub mod baselines;
pub mod concavity;
pub mod error;
pub mod gmm;
pub mod ideal;
pub mod mcmc;
pub mod metrics;
pub mod rng;
pub mod schedule;
pub mod slips;
pub mod targets;

pub use error::{Error, Result};
