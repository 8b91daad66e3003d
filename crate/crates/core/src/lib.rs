//! Deterministic training engine for multimodal multilabel classification
//! over precomputed embeddings.
//!
//! The crate is `no_std` + `alloc`. Enabling the `std` feature (on by default)
//! lets [`matrix`] partition large products across threads; results are
//! bitwise identical for any thread count.
//!
//! Module map:
//!
//! - [`matrix`]: dense row-major matrices with widened (f64) accumulation
//! - [`rng`]: counter-based SplitMix64 streams with Box–Muller normals
//! - [`data`]: feature/label tables, seeded splits, synthetic datasets
//! - [`losses`]: BCE, focal and asymmetric loss under one parameterization
//! - [`nn`]: MLP and gated-MLP heads with explicit backward passes
//! - [`optim`]: Adam and parameter EMA
//! - [`fusion`]: fusion plans, (two-stage) training and prediction
//! - [`metrics`]: precision/recall/F1 with sample, macro and micro averaging
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
pub use matrix::{Matrix, Scalar};
pub use rng::RngState;
