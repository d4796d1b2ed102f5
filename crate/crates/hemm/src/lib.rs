//! Heterogeneous effect mixture models: causal subgroup discovery from
//! observational data.
//!
//! The model softly partitions the covariate space into K components, each
//! with its own treatment-effect coefficient on top of shared two-headed
//! outcome networks. Training maximizes a penalized conditional likelihood
//! via a variational lower bound or EM; evaluation covers effect-estimation
//! error, inverse-propensity subgroup effects, and discovery quality against
//! reference baselines.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod nn;
pub mod rng;

pub use cli::cli_main;
pub use error::{HemmError, Result};
