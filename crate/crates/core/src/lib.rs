//! Banded modified-Cholesky estimation of inverse autocovariance matrices
//! for long-memory (FARIMA) time series.
//!
//! The crate covers exact FARIMA autocovariances and simulation
//! ([`farima`]), matrix-free operators and spectral norms ([`linalg`]),
//! the banded Cholesky inverse and its least-squares estimate
//! ([`chol_inverse`]), data-driven band selection ([`banding`]), regression
//! with long-memory errors ([`regression`]) and the Monte Carlo study
//! harness ([`experiments`]).

pub mod banding;
pub mod chol_inverse;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod farima;
pub mod linalg;
pub mod regression;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
