//! Discrete-choice estimation toolkit built around the Mixed Aggregate
//! Preference Logit (MAPL) model.
//!
//! MAPL replaces coefficient-level mixing distributions with an
//! alternative-specific *aggregate* valence distribution whose parameters are
//! produced by a shared estimator (linear map or small MLP) applied to each
//! alternative's features. Choice probabilities are Monte Carlo averages of
//! the logit link over inverse-CDF draws from those distributions.
//!
//! The crate also ships the reference baselines (MNL, mixed logit with
//! independent normal mixing, plain feed-forward utility networks), a panel
//! data simulator with four known data-generating processes, a truth
//! log-likelihood oracle, and a replication harness that scores every model
//! against the oracle in percent log-likelihood error.

pub mod config;
pub mod data;
pub mod dgp;
pub mod dist;
pub mod error;
pub mod harness;
pub mod models;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
