//! Active diffusion subsampling.
//!
//! A particle batch is run through a guided reverse diffusion under an
//! analytic Gaussian-mixture prior. At scheduled steps the agent acquires
//! the measurement group on which the particles' simulated measurements
//! disagree most, so the subsampling mask is designed during inference.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod plot;
pub mod guidance;
pub mod measurement;
pub mod policy;
pub mod prior;
pub mod rng;
pub mod schedule;

pub use error::{AdsError, Result};
