//! Estimation of the proportion of true null hypotheses (π₀) from large
//! families of simultaneous tests.
//!
//! The crate is organised bottom-up:
//!
//! - [`distributions`]: normal, central and noncentral Student-t functions,
//!   and expectations against half-line truncated t densities.
//! - [`testing`]: per-row Z and t tests producing p-values and effect sizes.
//! - [`epv`]: expected p-values and upper-tail probabilities of non-null
//!   p-values for each test family.
//! - [`estimators`]: Storey's λ estimator with bootstrap selection, the
//!   bias-corrected λ-averaged estimator, and the expected-p-value estimator
//!   with its one-step iteration.
//! - [`simulation`]: block-correlated Gaussian data generation and the
//!   bias/MSE/kurtosis study runner.
//! - [`io`]: expression-matrix ingestion and report types.

pub mod distributions;
pub mod epv;
pub mod error;
pub mod estimators;
pub mod io;
pub mod quadrature;
pub mod simulation;
pub mod special;
pub mod testing;

pub use error::{Error, Result};
