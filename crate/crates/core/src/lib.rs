// SPDX-License-Identifier: MIT OR Apache-2.0

//! Change-point detection for high-dimensional multivariate time series.
//!
//! Candidate change points are located with an overlapping-block binary
//! search that compares NMF losses of adjacent blocks, confirmed with a
//! one-sided Welch test of refit losses against a time-permutation null, and
//! each stationary segment gets a consensus co-clustering network.
//!
//! Independent work (NMF restarts, refit repetitions, consensus runs) runs on
//! the rayon pool when the `parallel` feature is enabled. Every random draw
//! is seeded from the configuration, so results do not depend on the number
//! of threads.

pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod inference;
pub mod io;
pub mod network;
pub mod nmf;
pub mod pipeline;
pub mod rank;
pub mod seed;
pub mod segmentation;
pub mod sim;

pub use config::{DetectorConfig, Preset};
pub use data::TimeSeriesMatrix;
pub use error::{Error, Result};
pub use exec::Schedule;
pub use nmf::{Factorization, FitSettings, LossKind};
pub use pipeline::{detect, segment_networks, DetectionResult, NetworkCut, SegmentNetwork};
