//! Semiparametric estimation of homophily in dyadic network formation with
//! agent-level unobserved heterogeneity.
//!
//! The crate simulates undirected networks from a threshold link-formation
//! model, estimates the homophily coefficient with an inverse-density-weighted
//! tetrad estimator (closed form) or a sign-based tail estimator, and runs
//! seeded Monte Carlo designs over both.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dgp;
pub mod dist;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod kde;
pub mod montecarlo;
pub mod network;
pub mod rng;
pub mod tail;

pub use error::{Error, Result};
