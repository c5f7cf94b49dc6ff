//! Causal mixture of hazard experts for right-censored treatment data.
//!
//! A shared encoder feeds three heads: a gate over latent baseline survival
//! clusters, a gate over treatment effect phenogroups and per-cluster log
//! hazard multipliers. Each phenogroup carries a treatment log hazard ratio.
//! Training alternates sampled hard posteriors with gradient steps on the
//! cluster-local Cox partial likelihood, refreshing smoothed per-cluster
//! baselines every epoch.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod network;
pub mod phenotype;
pub mod rng;
pub mod spline;
pub mod synthetic;

pub use data::{SurvivalDataset, SurvivalRecord};
pub use error::{CmheError, Result};
pub use model::{fit, CmheModel, FitConfig};
