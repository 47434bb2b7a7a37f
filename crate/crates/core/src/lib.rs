//! Synthetic control weights for many treated units at once, estimated with
//! the multivariate square-root lasso, plus the per-unit baselines, effect
//! estimators and simulation designs used to compare them.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, timing and
//! the command line live in the companion `synthmsc` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod effects;
pub mod error;
pub mod matops;
pub mod matrix;
pub mod panel;
pub mod sim;
pub mod solver;

pub use baselines::{BaselineConfig, Method};
pub use effects::EffectReport;
pub use error::{Error, PanelIssue, Result};
pub use matrix::Matrix;
pub use panel::{DesignSplit, Observation, PanelData};
pub use solver::{FitReport, MscConfig};
