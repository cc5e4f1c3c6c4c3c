//! Shadow credit-rating toolkit.
//!
//! Predicts nine aggregated agency rating classes from tabular financial,
//! macroeconomic, categorical and sector-description features. The main
//! model is a feed-forward network with a learned embedding of the sector
//! text; linear and one-vs-rest logistic regressions serve as baselines.
//! Models are compared by stratified K-fold cross-validation on quadratic
//! weighted kappa and explained with Shapley values.

pub mod artifact;
pub mod baselines;
pub mod commands;
pub mod domain;
pub mod error;
pub mod eval;
pub mod explain;
pub mod ingest;
pub mod model;
pub mod net;
pub mod preprocess;
pub mod rng;
pub mod train;

pub use error::{Error, ErrorKind, Result};
