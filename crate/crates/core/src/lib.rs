//! Two-step GMM estimation of a population mean when the outcome is missing
//! not at random.
//!
//! The response probability is a parametric logistic model in `(x, y)`. The
//! conditional restriction `E[1 - T/π(Z; γ) | X] = 0` is turned into `K`
//! unconditional moments with a power-series sieve `u_K(X)` and stacked with
//! the IPW moment for `θ = E[U(Z)]`. Everything here is pure computation over
//! in-memory samples; the crate is `no_std` (with `alloc`) unless the `std`
//! feature is enabled.
//!
//! Module map:
//!
//! - [`propensity`]: logistic response model with configurable feature map.
//! - [`basis`]: multi-index power-series sieve with standardization.
//! - [`sample`]: the observed sample and target functional `U`.
//! - [`gmm`]: moment system, Step I / Step II estimation.
//! - [`inference`]: sandwich variance, confidence intervals, population `V_K`.
//! - [`kselect`]: covariate-balancing and higher-order-MSE choice of `K`.
//! - [`baselines`]: MAR-naive IPW and the kernel efficient-score estimator.
//! - [`dgp`]: simulation scenarios and the efficiency-bound oracle.
//! - [`montecarlo`]: replication runner and summaries.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

extern crate alloc;

pub mod baselines;
pub mod basis;
pub mod dgp;
mod error;
pub mod gmm;
pub mod inference;
pub mod kselect;
pub mod linalg;
pub mod montecarlo;
pub mod optim;
pub mod propensity;
pub mod quadrature;
pub mod sample;
pub mod stats;

pub use error::{Error, Result};
