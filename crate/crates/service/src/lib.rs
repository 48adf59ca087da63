//! Command line workflow, model store and HTTP API around the estimator.

pub mod api;
pub mod cli;
pub mod store;
pub mod workflow;
