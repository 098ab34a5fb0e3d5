//! Conditional Value-at-Risk estimation with DD-GPCE-Kriging surrogates.

pub mod artifact;
pub mod basis;
pub mod error;
pub mod experiment;
pub mod inputs;
pub mod metrics;
pub mod models;
pub mod risk;
pub mod surrogate;

pub use error::{Error, Result};
