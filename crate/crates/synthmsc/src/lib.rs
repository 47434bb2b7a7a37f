//! Data ingestion, simulation harness and command-line interface for
//! multivariate synthetic control with the square-root lasso.

pub mod cli;
pub mod fitting;
pub mod fixtures;
pub mod ingest;
pub mod manifest;
pub mod simlab;
