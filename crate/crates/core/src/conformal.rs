//! Split-conformal calibration on hash partitions and majority prediction
//! sets.
//!
//! Each calibration partition `i` gets its own threshold `tau_i`, the
//! `floor(alpha (n_i + 1))`-th smallest score of the partition. A test point
//! gets one prediction set per partition, `C_i = {y : s(x, y) >= tau_i}`, and
//! the majority set keeps a class when more than `tau_hat` of those sets
//! contain it. With a single partition this is plain split conformal
//! prediction.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::binomial::{binomial_majority_threshold, check_alpha};
use crate::error::{Error, Result};
use crate::partition::{partition_indices, partition_sizes, FeatureVector, HashMode};
use crate::score::{ScoreMode, ScoreSource};

/// Rank (1-based) of the calibration score used as threshold:
/// `floor(alpha (n + 1))`. Zero means the quantile does not exist.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    libm::floor(alpha * (n as f64 + 1.0)) as usize
}

/// Smallest calibration set size with a non-zero quantile rank, i.e. the
/// integer form of `n >= 1/alpha - 1`.
pub fn min_partition_size(alpha: f64) -> usize {
    let mut n = libm::ceil(1.0 / alpha - 1.0).max(0.0) as usize;
    while quantile_rank(n, alpha) < 1 {
        n += 1;
    }
    while n > 0 && quantile_rank(n - 1, alpha) >= 1 {
        n -= 1;
    }
    n
}

/// Minimum calibration size for `partitions` partitions.
///
/// With `equal_partitions` this is the total needed when every partition
/// has the same size; otherwise it is the requirement on the smallest
/// partition alone.
pub fn min_calibration_size(alpha: f64, partitions: usize, equal_partitions: bool) -> usize {
    let per_partition = min_partition_size(alpha);
    if equal_partitions {
        partitions * per_partition
    } else {
        per_partition
    }
}

/// The `floor(alpha (n + 1))`-th smallest score.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(alloc::format!(
            "score {i} is not finite"
        )));
    }
    let rank = quantile_rank(scores.len(), alpha);
    if rank == 0 {
        return Err(Error::InfeasibleCalibration {
            partition: 0,
            size: scores.len(),
            required: min_partition_size(alpha),
        });
    }
    let mut buf = scores.to_vec();
    Ok(kth_smallest(&mut buf, rank))
}

/// `rank`-th smallest (1-based) element; reorders `values`.
pub(crate) fn kth_smallest(values: &mut [f64], rank: usize) -> f64 {
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, f64::total_cmp);
    *v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub alpha: f64,
    /// Number of calibration partitions `k_c`.
    pub partitions: usize,
    pub score_mode: ScoreMode,
    pub hash_mode: HashMode,
}

impl CalibrationConfig {
    pub fn new(alpha: f64, partitions: usize, score_mode: ScoreMode) -> Result<Self> {
        let config = Self {
            alpha,
            partitions,
            score_mode,
            hash_mode: HashMode::ByteHash,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_hash_mode(mut self, hash_mode: HashMode) -> Self {
        self.hash_mode = hash_mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.partitions == 0 {
            return Err(Error::InvalidConfig(
                "partition count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Conformal scores of the calibration points, grouped by partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCalibrationSet {
    partitions: Vec<Vec<f64>>,
}

impl ScoredCalibrationSet {
    pub fn from_assignments(
        scores: &[f64],
        assignments: &[usize],
        partition_count: usize,
    ) -> Result<Self> {
        if scores.len() != assignments.len() {
            return Err(Error::InvalidInput(alloc::format!(
                "{} scores but {} partition assignments",
                scores.len(),
                assignments.len()
            )));
        }
        let mut partitions = alloc::vec![Vec::new(); partition_count];
        for (j, (&s, &p)) in scores.iter().zip(assignments).enumerate() {
            if !s.is_finite() {
                return Err(Error::InvalidInput(alloc::format!(
                    "score {j} is not finite"
                )));
            }
            partitions
                .get_mut(p)
                .ok_or_else(|| Error::InvalidInput(alloc::format!("partition {p} out of range")))?
                .push(s);
        }
        Ok(Self { partitions })
    }

    pub fn from_partitions(partitions: Vec<Vec<f64>>) -> Self {
        Self { partitions }
    }

    pub fn partitions(&self) -> &[Vec<f64>] {
        &self.partitions
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.partitions.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.partitions.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A set of class indices, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionSet {
    members: Vec<usize>,
}

impl PredictionSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn contains(&self, y: usize) -> bool {
        self.members.binary_search(&y).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_full(&self, num_classes: usize) -> bool {
        self.members.len() == num_classes
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }
}

/// Calibrated per-partition thresholds plus the majority threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityPredictor {
    config: CalibrationConfig,
    thresholds: Vec<f64>,
    majority_threshold: usize,
    num_classes: usize,
    partition_sizes: Vec<usize>,
}

impl MajorityPredictor {
    /// Calibrates from already-scored partitions.
    pub fn from_scored(
        scored: &ScoredCalibrationSet,
        config: CalibrationConfig,
        num_classes: usize,
    ) -> Result<Self> {
        config.validate()?;
        if scored.partitions.len() != config.partitions {
            return Err(Error::InvalidInput(alloc::format!(
                "{} scored partitions for a {}-partition configuration",
                scored.partitions.len(),
                config.partitions
            )));
        }
        let required = min_partition_size(config.alpha);
        let mut thresholds = Vec::with_capacity(config.partitions);
        for (partition, scores) in scored.partitions.iter().enumerate() {
            if scores.is_empty() || quantile_rank(scores.len(), config.alpha) == 0 {
                return Err(Error::InfeasibleCalibration {
                    partition,
                    size: scores.len(),
                    required,
                });
            }
            thresholds.push(conformal_quantile(scores, config.alpha)?);
        }
        Ok(Self {
            config,
            thresholds,
            majority_threshold: binomial_majority_threshold(config.alpha, config.partitions)?,
            num_classes,
            partition_sizes: scored.sizes(),
        })
    }

    /// Rebuilds a predictor from stored parts, re-checking every invariant
    /// that can be checked without the calibration data.
    pub fn from_parts(
        config: CalibrationConfig,
        thresholds: Vec<f64>,
        majority_threshold: usize,
        num_classes: usize,
        partition_sizes: Vec<usize>,
    ) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::InvalidConfig(
                "at least two classes are required".into(),
            ));
        }
        if thresholds.len() != config.partitions || partition_sizes.len() != config.partitions {
            return Err(Error::InvalidInput(alloc::format!(
                "expected {} thresholds and partition sizes, got {} and {}",
                config.partitions,
                thresholds.len(),
                partition_sizes.len()
            )));
        }
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("thresholds must be finite".into()));
        }
        if majority_threshold > config.partitions {
            return Err(Error::InvalidInput(alloc::format!(
                "majority threshold {majority_threshold} exceeds {} partitions",
                config.partitions
            )));
        }
        Ok(Self {
            config,
            thresholds,
            majority_threshold,
            num_classes,
            partition_sizes,
        })
    }

    /// Same predictor with a different majority threshold. Only meant for
    /// studying alternative thresholds; the calibrated one is the one with
    /// the coverage guarantee.
    pub fn with_majority_threshold(mut self, majority_threshold: usize) -> Self {
        self.majority_threshold = majority_threshold;
        self
    }

    pub fn config(&self) -> &CalibrationConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    pub fn partition_count(&self) -> usize {
        self.config.partitions
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn majority_threshold(&self) -> usize {
        self.majority_threshold
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn partition_sizes(&self) -> &[usize] {
        &self.partition_sizes
    }

    /// Smallest partition size minus the minimum feasible size.
    pub fn feasibility_margin(&self) -> isize {
        let smallest = self.partition_sizes.iter().copied().min().unwrap_or(0);
        smallest as isize - min_partition_size(self.config.alpha) as isize
    }

    fn check_scores(&self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.num_classes {
            return Err(Error::InvalidInput(alloc::format!(
                "expected {} class scores, got {}",
                self.num_classes,
                scores.len()
            )));
        }
        Ok(())
    }

    /// Prediction set of partition `i`: `{y : s(x, y) >= tau_i}`.
    pub fn predict_set(&self, partition: usize, scores: &[f64]) -> Result<PredictionSet> {
        self.check_scores(scores)?;
        let tau = *self.thresholds.get(partition).ok_or_else(|| {
            Error::InvalidInput(alloc::format!("partition {partition} out of range"))
        })?;
        Ok(PredictionSet {
            members: (0..scores.len()).filter(|&y| scores[y] >= tau).collect(),
        })
    }

    pub fn partition_sets(&self, scores: &[f64]) -> Result<Vec<PredictionSet>> {
        (0..self.thresholds.len())
            .map(|i| self.predict_set(i, scores))
            .collect()
    }

    /// Number of partition sets containing each class.
    pub fn support(&self, scores: &[f64]) -> Result<Vec<usize>> {
        self.check_scores(scores)?;
        Ok(scores
            .iter()
            .map(|&s| self.thresholds.iter().filter(|&&tau| s >= tau).count())
            .collect())
    }

    pub fn predict_majority(&self, scores: &[f64]) -> Result<PredictionSet> {
        let support = self.support(scores)?;
        Ok(majority_set(&support, self.majority_threshold))
    }
}

/// Classes whose support exceeds `majority_threshold`.
pub fn majority_set(support: &[usize], majority_threshold: usize) -> PredictionSet {
    PredictionSet {
        members: (0..support.len())
            .filter(|&y| support[y] > majority_threshold)
            .collect(),
    }
}

/// Calibration partition of every point.
pub fn calibration_partitions(
    features: &[FeatureVector],
    config: &CalibrationConfig,
) -> Result<Vec<usize>> {
    partition_indices(features, config.partitions, config.hash_mode)
}

/// Scores every calibration point at its label and groups the scores by
/// partition.
pub fn score_calibration(
    source: ScoreSource<'_>,
    labels: &[usize],
    features: &[FeatureVector],
    config: &CalibrationConfig,
) -> Result<(ScoredCalibrationSet, Vec<usize>)> {
    config.validate()?;
    source.check_mode(config.score_mode)?;
    if source.len() != labels.len() || source.len() != features.len() {
        return Err(Error::InvalidInput(alloc::format!(
            "calibration inputs disagree in length: {} scored rows, {} labels, {} feature vectors",
            source.len(),
            labels.len(),
            features.len()
        )));
    }
    let assignments = calibration_partitions(features, config)?;
    let scores = labels
        .iter()
        .enumerate()
        .map(|(j, &y)| {
            if y >= source.num_classes() {
                return Err(Error::ClassOutOfRange {
                    class: y,
                    classes: source.num_classes(),
                });
            }
            source.score(
                config.score_mode,
                j,
                y,
                Some(&features[j]),
                config.hash_mode,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let scored = ScoredCalibrationSet::from_assignments(&scores, &assignments, config.partitions)?;
    Ok((scored, assignments))
}

/// Partitions and scores the calibration data, then fits one threshold per
/// partition and the majority threshold.
pub fn calibrate(
    source: ScoreSource<'_>,
    labels: &[usize],
    features: &[FeatureVector],
    config: CalibrationConfig,
) -> Result<MajorityPredictor> {
    let (scored, _) = score_calibration(source, labels, features, &config)?;
    MajorityPredictor::from_scored(&scored, config, source.num_classes())
}

/// Sizes of the calibration partitions the configuration would produce.
pub fn calibration_partition_sizes(
    features: &[FeatureVector],
    config: &CalibrationConfig,
) -> Result<Vec<usize>> {
    Ok(partition_sizes(
        &calibration_partitions(features, config)?,
        config.partitions,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quantile_smallest_at_boundary() {
        let scores: Vec<f64> = (0..9).map(|i| 0.9 - 0.1 * i as f64).collect();
        assert_eq!(quantile_rank(9, 0.1), 1);
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(conformal_quantile(&scores, 0.1).unwrap(), min);
    }

    #[test]
    fn quantile_hand_computation() {
        assert_eq!(conformal_quantile(&[0.3, 0.1, 0.2], 0.5).unwrap(), 0.2);
    }

    #[test]
    fn quantile_infeasible() {
        let scores = [0.5; 8];
        assert!(matches!(
            conformal_quantile(&scores, 0.1),
            Err(Error::InfeasibleCalibration {
                size: 8,
                required: 9,
                ..
            })
        ));
    }

    #[test]
    fn min_sizes() {
        assert_eq!(min_calibration_size(0.1, 1, true), 9);
        assert_eq!(min_calibration_size(0.1, 22, true), 198);
        assert_eq!(min_calibration_size(0.5, 4, true), 4);
        assert_eq!(min_calibration_size(0.05, 4, true), 76);
        assert_eq!(min_calibration_size(0.1, 22, false), 9);
        // 1/alpha - 1 is not an integer here.
        assert_eq!(min_partition_size(0.3), 3);
    }

    #[test]
    fn min_partition_size_is_tight() {
        for alpha in [0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.45, 0.5, 0.9] {
            let n = min_partition_size(alpha);
            assert!(quantile_rank(n, alpha) >= 1, "alpha {alpha}");
            assert!(n == 0 || quantile_rank(n - 1, alpha) == 0, "alpha {alpha}");
        }
    }

    #[test]
    fn identical_scores_give_identical_thresholds() {
        let scored = ScoredCalibrationSet::from_partitions(vec![vec![0.4; 9], vec![0.4; 12]]);
        let config = CalibrationConfig::new(0.1, 2, ScoreMode::Smoothed).unwrap();
        let p = MajorityPredictor::from_scored(&scored, config, 3).unwrap();
        assert_eq!(p.thresholds(), &[0.4, 0.4]);
    }

    #[test]
    fn empty_partition_is_infeasible() {
        let scored = ScoredCalibrationSet::from_partitions(vec![vec![0.4; 9], vec![]]);
        let config = CalibrationConfig::new(0.1, 2, ScoreMode::Smoothed).unwrap();
        assert_eq!(
            MajorityPredictor::from_scored(&scored, config, 3),
            Err(Error::InfeasibleCalibration {
                partition: 1,
                size: 0,
                required: 9
            })
        );
    }

    #[test]
    fn full_set_when_thresholds_are_low() {
        let config = CalibrationConfig::new(0.5, 3, ScoreMode::Hps).unwrap();
        let p = MajorityPredictor::from_parts(config, vec![0.1, 0.05, 0.0], 1, 3, vec![1, 1, 1])
            .unwrap();
        let set = p.predict_majority(&[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(set.members(), &[0, 1, 2]);
    }

    #[test]
    fn support_above_threshold() {
        // Memberships of class 0 across partitions: in, in, out.
        let config = CalibrationConfig::new(0.5, 3, ScoreMode::Hps).unwrap();
        let p = MajorityPredictor::from_parts(config, vec![0.3, 0.4, 0.6], 1, 3, vec![1, 1, 1])
            .unwrap();
        let scores = [0.5, 0.1, 0.4];
        assert_eq!(p.support(&scores).unwrap()[0], 2);
        assert!(p.predict_majority(&scores).unwrap().contains(0));
        assert!(!p.predict_majority(&scores).unwrap().contains(1));
    }

    #[test]
    fn single_partition_majority_is_the_partition_set() {
        let config = CalibrationConfig::new(0.1, 1, ScoreMode::Hps).unwrap();
        let p = MajorityPredictor::from_parts(config, vec![0.25], 0, 3, vec![9]).unwrap();
        let scores = [0.2, 0.3, 0.5];
        assert_eq!(
            p.predict_majority(&scores).unwrap(),
            p.predict_set(0, &scores).unwrap()
        );
    }

    #[test]
    fn score_length_mismatch() {
        let config = CalibrationConfig::new(0.1, 1, ScoreMode::Hps).unwrap();
        let p = MajorityPredictor::from_parts(config, vec![0.25], 0, 3, vec![9]).unwrap();
        assert!(matches!(
            p.predict_majority(&[0.5, 0.5]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(CalibrationConfig::new(0.0, 1, ScoreMode::Hps).is_err());
        assert!(CalibrationConfig::new(1.0, 1, ScoreMode::Hps).is_err());
        assert!(CalibrationConfig::new(0.1, 0, ScoreMode::Hps).is_err());
    }
}
