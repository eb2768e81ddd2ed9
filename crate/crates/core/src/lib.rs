//! Regression with functional covariates observed under banded measurement
//! error.
//!
//! The covariance of the error-free covariate is recovered by low-rank
//! completion of the empirical covariance with a diagonal band removed. Its
//! rank is chosen on random subgrids. The recovered eigensystem then drives
//! regression-calibration slope estimators for scalar, functional and
//! quadratic responses.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod error;
pub mod grid;
pub mod io;
pub mod lbfgs;
pub mod operator;
pub mod pipeline;
pub mod rank;
pub mod regression;
pub mod seed;
pub mod simulation;

pub use covariance::{band_mask, empirical_covariance, minimize_rank_j, BandMask, CovMatrix};
pub use error::{Error, Result};
pub use grid::{CurveSet, Grid, GridFunction};
pub use operator::{kernel_eigen, pseudo_inverse, EigenSystem};
pub use rank::{essential_rank, estimate_rank_mode, RankSettings};
