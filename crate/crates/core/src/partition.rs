//! Hash-based partitioning of datapoints.
//!
//! A point's partition depends only on its feature values, never on where it
//! sits in a dataset, so reordering a dataset moves nothing and a single edit
//! touches a single partition.

use alloc::vec::Vec;
use core::fmt;
use core::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, non-empty feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyFeatures);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { index });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(x: FeatureVector) -> Self {
        x.0
    }
}

/// How feature vectors are hashed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HashMode {
    /// 64-bit FNV-1a over the little-endian IEEE-754 bit patterns of the
    /// entries, in order.
    #[default]
    ByteHash,
    /// Sum of integer-valued features (the pixel-sum rule for images),
    /// reduced modulo 2^64.
    IntegerSum,
}

impl HashMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HashMode::ByteHash => "byte-hash",
            HashMode::IntegerSum => "integer-sum",
        }
    }
}

impl fmt::Display for HashMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for HashMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "byte-hash" => Ok(HashMode::ByteHash),
            "integer-sum" => Ok(HashMode::IntegerSum),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown hash mode `{other}` (expected byte-hash or integer-sum)"
            ))),
        }
    }
}

// Integers beyond 2^53 are not exactly representable, so they are rejected
// rather than silently rounded.
const MAX_EXACT_INTEGER: f64 = 9_007_199_254_740_992.0;

/// Hashes a feature vector. Equal vectors (bit-for-bit) always hash equally.
pub fn hash_feature(x: &FeatureVector, mode: HashMode) -> Result<u64> {
    match mode {
        HashMode::ByteHash => {
            let mut hasher = FnvHasher::default();
            for v in x.values() {
                hasher.write(&v.to_bits().to_le_bytes());
            }
            Ok(hasher.finish())
        }
        HashMode::IntegerSum => {
            let mut sum: i128 = 0;
            for (index, &value) in x.values().iter().enumerate() {
                if libm::trunc(value) != value || libm::fabs(value) > MAX_EXACT_INTEGER {
                    return Err(Error::NonIntegerFeature { index, value });
                }
                sum += value as i128;
            }
            Ok(sum.rem_euclid(1i128 << 64) as u64)
        }
    }
}

/// Partition index of a point together with the partition count it was
/// computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionAssignment {
    pub index: usize,
    pub partition_count: usize,
}

pub fn assign_partition(
    x: &FeatureVector,
    partition_count: usize,
    mode: HashMode,
) -> Result<PartitionAssignment> {
    if partition_count == 0 {
        return Err(Error::InvalidConfig(
            "partition count must be at least 1".into(),
        ));
    }
    let hash = hash_feature(x, mode)?;
    Ok(PartitionAssignment {
        index: (hash % partition_count as u64) as usize,
        partition_count,
    })
}

/// Partition index of every point in `features`.
pub fn partition_indices(
    features: &[FeatureVector],
    partition_count: usize,
    mode: HashMode,
) -> Result<Vec<usize>> {
    features
        .iter()
        .map(|x| assign_partition(x, partition_count, mode).map(|a| a.index))
        .collect()
}

/// Number of points in each partition.
pub fn partition_sizes(indices: &[usize], partition_count: usize) -> Vec<usize> {
    let mut sizes = alloc::vec![0; partition_count];
    for &i in indices {
        sizes[i] += 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_vectors() {
        assert_eq!(FeatureVector::new(vec![]), Err(Error::EmptyFeatures));
        assert_eq!(
            FeatureVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFiniteFeature { index: 1 })
        );
        assert_eq!(
            FeatureVector::new(vec![f64::INFINITY]),
            Err(Error::NonFiniteFeature { index: 0 })
        );
    }

    #[test]
    fn zero_vector_hash_is_fixed() {
        // FNV-1a over 8 zero bytes.
        let h = hash_feature(&fv(&[0.0]), HashMode::ByteHash).unwrap();
        let mut expected: u64 = 0xcbf2_9ce4_8422_2325;
        for _ in 0..8 {
            expected ^= 0;
            expected = expected.wrapping_mul(0x0000_0100_0000_01b3);
        }
        assert_eq!(h, expected);
    }

    #[test]
    fn negative_zero_is_a_distinct_point() {
        let a = hash_feature(&fv(&[0.0]), HashMode::ByteHash).unwrap();
        let b = hash_feature(&fv(&[-0.0]), HashMode::ByteHash).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn integer_sum_mode() {
        assert_eq!(
            hash_feature(&fv(&[3.0, 4.0, 5.0]), HashMode::IntegerSum),
            Ok(12)
        );
        assert_eq!(
            hash_feature(&fv(&[1.0, 0.5]), HashMode::IntegerSum),
            Err(Error::NonIntegerFeature {
                index: 1,
                value: 0.5
            })
        );
        assert_eq!(
            hash_feature(&fv(&[-1.0]), HashMode::IntegerSum),
            Ok(u64::MAX)
        );
    }

    #[test]
    fn zero_partitions_is_a_config_error() {
        assert!(matches!(
            assign_partition(&fv(&[1.0]), 0, HashMode::ByteHash),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn single_partition_takes_everything() {
        for v in [0.0, 1.5, -7.25, 1e300] {
            let a = assign_partition(&fv(&[v, v]), 1, HashMode::ByteHash).unwrap();
            assert_eq!(a.index, 0);
        }
    }

    #[test]
    fn mode_parses() {
        assert_eq!("byte-hash".parse::<HashMode>(), Ok(HashMode::ByteHash));
        assert_eq!("integer-sum".parse::<HashMode>(), Ok(HashMode::IntegerSum));
        assert!("sha".parse::<HashMode>().is_err());
    }
}
