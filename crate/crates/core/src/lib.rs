//! Supervised grouping of regression predictors via weighted implicit networks.
//!
//! The crate estimates a sparse linear model on one half of the data, builds a
//! fully connected weighted network over the selected predictors (regression,
//! partial-correlation, or ANOVA interaction weights), computes network-wide
//! metrics (degree centrality, clustering coefficient) with closed-form or
//! bootstrap covariance estimates on the other half, and detects groups of
//! predictors with statistically indistinguishable metric values by sequential
//! hypothesis testing.

pub mod asymptotics;
pub mod bootstrap;
pub mod cluster;
pub mod data;
pub mod error;
pub mod nwm;
pub mod penalty;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod weights;

pub use asymptotics::{CovarianceEstimate, CovarianceMethod, CovarianceTarget};
pub use cluster::{ClusterResult, SeqTestConfig};
pub use data::{Dataset, SplitPair};
pub use error::{Error, Result};
pub use nwm::{NwmKind, NwmVector};
pub use penalty::{ActiveSet, PenaltyConfig, PenaltyFamily, PostSelectionFit};
pub use rng::RngStream;
pub use weights::{ImplicitNetwork, NetworkRecipe, PartialCorrelations, WeightFamily, WeightFn};

