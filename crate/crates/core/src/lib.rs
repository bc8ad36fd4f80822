//! Feature-distributed machine learning (FDML).
//!
//! Several parties each hold a disjoint vertical slice of every training
//! sample's features. Each party trains its own sub-model and shares only a
//! scalar local prediction per sample with a coordinator, which keeps the
//! latest prediction of every party for every sample and hands back their sum.
//! The composite model is `sigmoid(sum_j alpha_j(x_j, xi_j))`, trained by
//! block-wise asynchronous SGD under a bounded-staleness (SSP) admission rule.
//!
//! Module map:
//!
//! - [`model`]: sub-models, the sigmoid aggregator, log loss and partial gradients.
//! - [`data`]: svmlight parsing, vertical partitions and per-party projections.
//! - [`schedule`]: the seed-shared mini-batch schedule and step-size rule.
//! - [`privacy`]: additive noise on outgoing local predictions.
//! - [`coordinator`]: the local prediction matrix and the admission rule.
//! - [`transport`]: the binary wire protocol and its in-process / TCP carriers.
//! - [`worker`]: one party's push / pull / update loop.
//! - [`train`]: FDML, local and centralized training runs with per-epoch metrics.
//! - [`metrics`]: AUC, log loss, reports and convergence instrumentation.
//! - [`config`] and [`cli`]: the key=value run configuration and the `fdml` binary.

pub mod cli;
pub mod config;
pub mod coordinator;
pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod privacy;
pub mod schedule;
pub mod train;
pub mod transport;
pub mod verify;
pub mod worker;

pub use error::{Error, Result};
