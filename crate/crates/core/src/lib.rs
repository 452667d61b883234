//! Signal-strength distance estimation for ultra-wideband transceivers.
//!
//! - [`dataset`]: per-packet records, the canonical CSV schema and splits.
//! - [`sim`]: a synthetic channel and receiver producing those records.
//! - [`features`]: feature matrices and standardization.
//! - [`regressors`]: KNN, least squares / ridge and a regression tree.
//! - [`evaluation`]: averaged MAE, environment transfer, leave-one-distance-out.
//! - [`protocol`]: two-phase minimum-gain ranging.
//! - [`experiments`]: config-driven runners behind the `uwb-dess` binary.
//! - [`metrics`]: correctly rounded summation for order-independent means.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod evaluation;
pub mod experiments;
pub mod features;
pub mod metrics;
pub mod protocol;
pub mod regressors;
pub mod sim;
