// Index loops mirror the row/column structure of the matrix math and stay.
#![allow(clippy::needless_range_loop)]

//! Out-of-distribution detection across independently trained modes.
//!
//! The crate bundles a deterministic numeric substrate, synthetic benchmark
//! generation, small MLP "modes" trained per seed, seven post-hoc OoD
//! detectors with their mode-ensemble variants, FPR95/AUROC evaluation,
//! loss-landscape probing, and a closed-form Gaussian analysis of the
//! accuracy gap between in- and out-distribution data.

pub mod data;
pub mod detectors;
pub mod ensemble;
pub mod error;
pub mod landscape;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod theory;

pub use error::{Error, Result};
pub use numkit::{Rng, Tensor};
