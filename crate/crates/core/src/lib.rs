//! Estimation of treatment effects in an index-trial population from a
//! composite of trial data, external data, and optionally a third target
//! population.

pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod nuisance;
pub mod oracle;

pub use error::{Error, Result};
