use alloc::string::String;

use crate::score::ScoreMode;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("feature vector is empty")]
    EmptyFeatures,

    #[error("feature {index} is not finite")]
    NonFiniteFeature { index: usize },

    #[error("feature {index} is not integer-valued ({value}); integer-sum hashing needs integer features")]
    NonIntegerFeature { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error(
        "infeasible calibration: partition {partition} has {size} points, at least {required} are needed"
    )]
    InfeasibleCalibration {
        partition: usize,
        size: usize,
        required: usize,
    },

    #[error("training radius {radius} exceeds the number of classifiers {classifiers}")]
    InvalidRadius { radius: usize, classifiers: usize },

    #[error("score mode `{0}` has no training-poisoning certificate; use the smoothed score")]
    UnsupportedMode(ScoreMode),

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
}
