//! Frame-bundle simulation of hypoelliptic diffusions on sub-Riemannian
//! manifolds, with the variational and large-deviation diagnostics around them.
//!
//! Module map:
//! - [`geometry`], [`models`]: chart models, brackets, divergence, validation.
//! - [`frame_bundle`]: horizontal lift, canonical fields, development.
//! - [`stochastics`]: Wong–Zakai simulation and distributional checks.
//! - [`roughpath`]: level-2 lifts, Chen algebra, Besov norms.
//! - [`variational`]: energy, distance, rate function, Malliavin covariance.
//! - [`heatkernel`], [`bridge`]: Monte Carlo heat kernels and pinned diffusions.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

pub mod bridge;
pub mod config;
pub mod error;
pub mod frame_bundle;
pub mod geometry;
pub mod heatkernel;
mod linalg;
pub mod models;
mod optim;
pub mod paths;
pub mod report;
pub mod roughpath;
pub mod stats;
pub mod stochastics;
pub mod variational;

pub use error::{Error, Result};
pub use frame_bundle::{BundleTangent, Drift, FramePoint, FrameTrajectory};
pub use geometry::{ManifoldModel, Periodicity, TangentVector};
pub use paths::{BasePath, CameronMartinPath, PiecewiseLinearPath};
