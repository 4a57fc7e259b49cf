//! Empirical-likelihood weighted estimation for covariance structure models.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkit`]: dense symmetric-matrix helpers (`vecs`, Kronecker products,
//!   eigenvalue bounds, Cholesky solves).
//! - [`el`]: the empirical-likelihood dual solver and its feasibility
//!   diagnostics.
//! - [`constraints`]: constraint matrices encoding side information
//!   (independence of errors and covariates, known marginal medians).
//! - [`sem`]: recursive structural equation models, structured covariance
//!   `Σ(θ)`, its Jacobian, and sample / EL-weighted covariances.
//! - [`fit`]: ML and GLS discrepancy functions and the minimum-discrepancy
//!   estimators (plain and EL-weighted).
//! - [`asymptotics`]: sandwich covariance formulas for both estimators.
//! - [`sim`]: data generators and the Monte Carlo replication engine.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod constraints;
pub mod el;
mod error;
pub mod fit;
pub mod numkit;
pub mod sem;
pub mod sim;

pub use error::{Error, Result};
