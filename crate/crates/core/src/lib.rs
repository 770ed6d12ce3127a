//! Transient-state magnetization-transfer fingerprinting toolkit.
//!
//! The crate simulates two-pool MT fingerprints for arbitrary scan
//! schedules, generates randomized training data, trains a bidirectional
//! LSTM that maps {fingerprint, scan parameters} to
//! {kmw, M0m, T2m, T1w}, and benchmarks it against a fixed-schedule dense
//! network and multi-start least-squares fitting on banded digital phantoms.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod fit;
pub mod image;
pub mod nn;
pub mod phantom;
pub mod physics;
pub mod rng;
pub mod schedule;

pub use error::{OtomError, Result};
pub use physics::{Fingerprint, Lineshape, PoolConstants, ScanPoint, TissueParams};
pub use schedule::Schedule;
