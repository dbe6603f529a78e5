//! Two-stage Bayesian variable selection for joint models of multiple
//! longitudinal markers and competing-risks survival.

pub mod error;
pub mod hazard;
pub mod longitudinal;
pub mod quadrature;
pub mod samplers;
pub mod simgen;
pub mod stage1;
pub mod stage2;
pub mod selection;
pub mod metrics;
pub mod dynpred;
pub mod config;
pub mod experiment;
pub mod cli;

pub use error::{Error, Result};
