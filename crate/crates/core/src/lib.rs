//! Conformal prediction sets that stay reliable when training or calibration
//! data is poisoned.
//!
//! The crate is `no_std` (it needs `alloc`). It covers the whole pipeline:
//!
//! - [`partition`]: order-invariant, hash-based assignment of datapoints to
//!   training and calibration partitions.
//! - [`score`]: the smoothed ensemble-vote score, HPS and reproducible APS.
//! - [`conformal`] and [`binomial`]: split-conformal calibration per
//!   partition, majority prediction sets and the exact binomial majority
//!   threshold.
//! - [`certify`]: worst-case score bounds, worst-case quantiles and
//!   per-point coverage/size reliability certificates.
//! - [`oracle`]: brute-force bound enumeration and an attack search that
//!   realises the edit-distance threat model, used to falsify certificates.
//! - [`eval`] and [`synth`]: metrics and a synthetic ensemble generator.
//!
//! File formats, the command-line tool and parallel drivers live in the
//! `rps` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod binomial;
pub mod certify;
pub mod conformal;
mod error;
pub mod eval;
pub mod oracle;
pub mod partition;
pub mod score;
pub mod synth;

pub use crate::certify::{Certificate, Certifier, JointVerdict, RadiusVerdict, ThreatRadius};
pub use crate::conformal::{calibrate, CalibrationConfig, MajorityPredictor, PredictionSet};
pub use crate::error::{Error, Result};
pub use crate::partition::{FeatureVector, HashMode};
pub use crate::score::{ProbabilityMatrix, ScoreMode, ScoreSource, VoteDistribution, VoteMatrix};

/// Version of the on-disk formats produced from this crate's types.
pub const FORMAT_VERSION: u32 = 1;
