//! Hierarchical Gaussian-process forecasting for stochastically evolving
//! time series.
//!
//! The model treats the data (prices, wind speeds) and its volatility as a
//! coupled pair of processes: log-volatility follows a Brownian-motion GP,
//! and conditional on a volatility path the log-data follows a GP whose
//! covariance is the integrated squared volatility. Training is a three-step
//! pipeline — variational volatility inference from log returns, marginal
//! likelihood fitting of the volatility GP, marginal likelihood fitting of
//! the data GP — and forecasting propagates volatility uncertainty by
//! sampling volatility paths, building a data kernel per path, and sampling
//! data paths under each.
//!
//! See the `book/` guide for a narrative walkthrough; `volt-cli` exposes the
//! pipeline as `simulate` / `fit` / `forecast` / `evaluate` subcommands.

pub mod error;
pub mod linalg;
pub mod rng;
pub mod opt;
pub mod timeseries;
pub mod kernels;
pub mod means;
pub mod gp;
pub mod sde;
pub mod gpcv;
pub mod model;
pub mod eval;

pub use error::{Result, VoltError};
