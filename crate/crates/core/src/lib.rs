//! Nearest neighbor Gaussian process (NNGP) models for large geostatistical data.
//!
//! The numerical core (`geo`, `covariance`, `linalg`, `factors`) is generic over
//! [`scalar::Scalar`] and runs in `f32` or `f64`. Samplers, prediction and
//! diagnostics work in `f64`. The aliases below fix the scalar type.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod cli;
pub mod config;
pub mod conjugate;
pub mod covariance;
pub mod data;
pub mod diagnostics;
pub mod factors;
pub mod geo;
pub mod io;
pub mod linalg;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod posterior;
pub mod samplers;
pub mod samples;
pub mod scalar;
pub mod simulate;

pub use covariance::CovFamily;
pub use factors::KernelKind;
pub use geo::{NeighborGraph, Ordering};
pub use posterior::ModelKind;

pub type Coordinates = geo::Coordinates<f64>;
pub type Coordinates32 = geo::Coordinates<f32>;
pub type CovarianceSpec = covariance::CovarianceSpec<f64>;
pub type CovarianceSpec32 = covariance::CovarianceSpec<f32>;
pub type Kernel = factors::Kernel<f64>;
pub type Kernel32 = factors::Kernel<f32>;
pub type NngpFactors = factors::NngpFactors<f64>;
pub type NngpFactors32 = factors::NngpFactors<f32>;
pub type Codebook = geo::Codebook<f64>;
pub type Cholesky = linalg::Cholesky<f64>;
