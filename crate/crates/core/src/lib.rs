//! Continual-learning deep state-space models.
//!
//! A neural transition model is fitted to observed time series through a
//! differentiable ensemble Kalman filter, and then carried across a sequence
//! of related tasks. Forgetting of earlier tasks is controlled by one of the
//! regularizers in [`continual`]: Online-EWC (plus the vanilla multi-anchor
//! variant), MAS, SI and LwF.
//!
//! Module map:
//!
//! - [`numcore`]: dense matrices, Cholesky, Gaussian densities and a
//!   reverse-mode autodiff tape.
//! - [`nets`]: transition network, process-noise parameters, recurrent
//!   recognition network and the flat parameter registry.
//! - [`enkf`]: forecast/filter steps, per-step log-likelihood, sequence loss
//!   and free-running forecasts.
//! - [`continual`]: penalties and post-task consolidation.
//! - [`training`]: Adam, per-task training and sequential-task runs.
//! - [`data`]: CSV ingestion, windowing, task partitioning and synthetic
//!   generators.

pub mod continual;
pub mod data;
pub mod enkf;
mod error;
pub mod nets;
pub mod numcore;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
