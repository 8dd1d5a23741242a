//! Synthetic ensembles with a known noise model.
//!
//! Each of `k_t` classifiers votes for the true label with the class's
//! accuracy and otherwise for a uniformly random wrong class. Features are
//! uniform random vectors that only feed the partition hash.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::FeatureVector;
use crate::score::VoteMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnsembleSpec {
    pub num_classes: usize,
    pub num_classifiers: usize,
    /// Per-class probability that a classifier votes for the true label.
    pub accuracy: Vec<f64>,
    /// Class probabilities; must sum to one.
    pub priors: Vec<f64>,
    pub calibration_size: usize,
    pub test_size: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl SyntheticEnsembleSpec {
    /// Uniform priors and one accuracy for every class.
    pub fn uniform(
        num_classes: usize,
        num_classifiers: usize,
        accuracy: f64,
        calibration_size: usize,
        test_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            num_classes,
            num_classifiers,
            accuracy: alloc::vec![accuracy; num_classes],
            priors: alloc::vec![1.0 / num_classes as f64; num_classes],
            calibration_size,
            test_size,
            feature_dim: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.num_classes < 2 {
            return bad("at least two classes are required");
        }
        if self.num_classifiers == 0 {
            return bad("at least one classifier is required");
        }
        if self.feature_dim == 0 {
            return bad("feature dimension must be positive");
        }
        if self.accuracy.len() != self.num_classes || self.priors.len() != self.num_classes {
            return bad("accuracy and priors need one entry per class");
        }
        if self.accuracy.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("accuracies must lie in [0, 1]");
        }
        if self.priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("priors must be non-negative");
        }
        let sum: f64 = self.priors.iter().sum();
        if libm::fabs(sum - 1.0) > 1e-9 {
            return bad("priors must sum to 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSplit {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<usize>,
    pub votes: VoteMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub calibration: SyntheticSplit,
    pub test: SyntheticSplit,
}

fn sample_label(rng: &mut ChaCha8Rng, priors: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (y, &p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return y;
        }
    }
    // Rounding left a sliver above the last cumulative sum.
    priors.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn sample_split(
    spec: &SyntheticEnsembleSpec,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticSplit> {
    let k = spec.num_classes;
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut votes = Vec::with_capacity(n * spec.num_classifiers);
    for _ in 0..n {
        let y = sample_label(rng, &spec.priors);
        let x: Vec<f64> = (0..spec.feature_dim).map(|_| rng.random()).collect();
        features.push(FeatureVector::new(x)?);
        labels.push(y);
        for _ in 0..spec.num_classifiers {
            let vote = if rng.random_bool(spec.accuracy[y]) {
                y
            } else {
                let wrong = rng.random_range(0..k - 1);
                if wrong >= y {
                    wrong + 1
                } else {
                    wrong
                }
            };
            votes.push(vote);
        }
    }
    Ok(SyntheticSplit {
        features,
        labels,
        votes: VoteMatrix::new(k, spec.num_classifiers, votes)?,
    })
}

/// Calibration and test splits, deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticEnsembleSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let calibration = sample_split(spec, spec.calibration_size, &mut rng)?;
    let test = sample_split(spec, spec.test_size, &mut rng)?;
    Ok(SyntheticData { calibration, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_accuracy_votes_equal_labels() {
        let spec = SyntheticEnsembleSpec::uniform(4, 5, 1.0, 50, 10, 7);
        let data = generate_synthetic(&spec).unwrap();
        for split in [&data.calibration, &data.test] {
            for (j, &y) in split.labels.iter().enumerate() {
                assert!(split.votes.row(j).iter().all(|&v| v == y));
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticEnsembleSpec::uniform(3, 4, 0.7, 30, 5, 11);
        assert_eq!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&spec).unwrap()
        );
        let other = SyntheticEnsembleSpec {
            seed: 12,
            ..spec.clone()
        };
        assert_ne!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn chance_accuracy_is_uniform() {
        let k = 4;
        let spec = SyntheticEnsembleSpec::uniform(k, 400, 1.0 / k as f64, 20, 0, 3);
        let data = generate_synthetic(&spec).unwrap();
        for j in 0..20 {
            let pi = data.calibration.votes.distribution(j);
            for y in 0..k {
                // 400 draws, sd ~ 0.022.
                assert!((pi.fraction(y) - 0.25).abs() < 0.11);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SyntheticEnsembleSpec::uniform(3, 4, 0.7, 30, 5, 11);
        spec.priors = alloc::vec![0.5, 0.5, 0.5];
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = SyntheticEnsembleSpec::uniform(3, 4, 0.7, 30, 5, 11);
        spec.accuracy[0] = 1.5;
        assert!(generate_synthetic(&spec).is_err());
    }
}
