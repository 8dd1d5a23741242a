//! Worst-case reliability certificates.
//!
//! Under training poisoning an adversary with `r_t` edits controls at most
//! `r_t` of the `k_t` partition classifiers, i.e. it can move at most
//! `r_t / k_t` vote mass. Greedy redistribution gives the exact extreme
//! smoothed scores, from which worst-case calibration quantiles follow.
//! Under calibration poisoning `r_c` edits reach at most `r_c` calibration
//! partitions, so at most `r_c` partition sets change.
//!
//! All verdicts are sufficient conditions: `true` means no attack within the
//! radius can remove (coverage) or add (size) a class.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conformal::{
    kth_smallest, min_partition_size, quantile_rank, MajorityPredictor, PredictionSet,
};
use crate::error::{Error, Result};
use crate::partition::{partition_indices, FeatureVector};
use crate::score::{softmax_at, ScoreMode, VoteDistribution, VoteMatrix};

/// Edit budget on the training (`training`, r_t) and calibration
/// (`calibration`, r_c) data.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct ThreatRadius {
    #[serde(rename = "r_t")]
    pub training: usize,
    #[serde(rename = "r_c")]
    pub calibration: usize,
}

impl ThreatRadius {
    pub const fn new(training: usize, calibration: usize) -> Self {
        Self {
            training,
            calibration,
        }
    }

    /// All pairs `(r_t, r_c)` with `r_t <= max_training`,
    /// `r_c <= max_calibration`, ordered by `r_t` then `r_c`.
    pub fn grid(max_training: usize, max_calibration: usize) -> Vec<Self> {
        let mut out = Vec::with_capacity((max_training + 1) * (max_calibration + 1));
        for t in 0..=max_training {
            for c in 0..=max_calibration {
                out.push(Self::new(t, c));
            }
        }
        out
    }
}

/// Counts elementary steps (argmax scans, softmax evaluations, selection
/// passes) for complexity checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    ops: u64,
}

impl OpCounter {
    pub fn ops(&self) -> u64 {
        self.ops
    }

    fn add(&mut self, n: usize) {
        self.ops += n as u64;
    }
}

fn check_radius(pi: &VoteDistribution, y: usize, radius: usize) -> Result<()> {
    if y >= pi.num_classes() {
        return Err(Error::ClassOutOfRange {
            class: y,
            classes: pi.num_classes(),
        });
    }
    if radius > pi.num_classifiers() {
        return Err(Error::InvalidRadius {
            radius,
            classifiers: pi.num_classifiers(),
        });
    }
    Ok(())
}

/// Class other than `y` with the most votes; lowest index on ties.
fn argmax_excluding(counts: &[u32], y: usize, ops: &mut OpCounter) -> Option<usize> {
    ops.add(counts.len());
    let mut best: Option<usize> = None;
    for (i, &c) in counts.iter().enumerate() {
        if i != y && best.is_none_or(|b| c > counts[b]) {
            best = Some(i);
        }
    }
    best
}

/// Vote counts after the greedy maximisation of `s(x, y)`: each step moves
/// one vote from the strongest other class to `y`.
pub fn upper_bound_counts(
    pi: &VoteDistribution,
    y: usize,
    radius: usize,
    ops: &mut OpCounter,
) -> Result<Vec<u32>> {
    check_radius(pi, y, radius)?;
    let total = pi.num_classifiers() as u32;
    let mut counts = pi.counts().to_vec();
    for _ in 0..radius {
        let Some(donor) = argmax_excluding(&counts, y, ops) else {
            break;
        };
        if counts[donor] == 0 || counts[y] == total {
            break;
        }
        counts[donor] -= 1;
        counts[y] += 1;
    }
    Ok(counts)
}

/// Vote counts after the greedy minimisation of `s(x, y)`: each step moves
/// one vote from `y` (or, once `y` has none, from the weakest other
/// non-empty class) to the strongest class other than `y`.
pub fn lower_bound_counts(
    pi: &VoteDistribution,
    y: usize,
    radius: usize,
    ops: &mut OpCounter,
) -> Result<Vec<u32>> {
    check_radius(pi, y, radius)?;
    let mut counts = pi.counts().to_vec();
    for _ in 0..radius {
        let Some(receiver) = argmax_excluding(&counts, y, ops) else {
            break;
        };
        let donor = if counts[y] > 0 {
            y
        } else {
            ops.add(counts.len());
            // Weakest non-empty class that is neither y nor the receiver;
            // lowest index on ties.
            let mut weakest: Option<usize> = None;
            for (i, &c) in counts.iter().enumerate() {
                if i != y && i != receiver && c > 0 && weakest.is_none_or(|w| c < counts[w]) {
                    weakest = Some(i);
                }
            }
            match weakest {
                Some(w) => w,
                None => break,
            }
        };
        counts[donor] -= 1;
        counts[receiver] += 1;
    }
    Ok(counts)
}

fn score_of(counts: &[u32], total: usize, y: usize, ops: &mut OpCounter) -> f64 {
    ops.add(counts.len());
    softmax_at(counts, total as u32, y)
}

/// Largest smoothed score of class `y` reachable with `radius` corrupted
/// classifiers.
pub fn upper_bound_score(pi: &VoteDistribution, y: usize, radius: usize) -> Result<f64> {
    let mut ops = OpCounter::default();
    let counts = upper_bound_counts(pi, y, radius, &mut ops)?;
    Ok(softmax_at(&counts, pi.num_classifiers() as u32, y))
}

/// Smallest smoothed score of class `y` reachable with `radius` corrupted
/// classifiers.
pub fn lower_bound_score(pi: &VoteDistribution, y: usize, radius: usize) -> Result<f64> {
    let mut ops = OpCounter::default();
    let counts = lower_bound_counts(pi, y, radius, &mut ops)?;
    Ok(softmax_at(&counts, pi.num_classifiers() as u32, y))
}

/// Per-class lower and upper score bounds of one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ScoreBounds {
    /// Degenerate bounds for a zero training radius.
    pub fn exact(scores: &[f64]) -> Self {
        Self {
            lower: scores.to_vec(),
            upper: scores.to_vec(),
        }
    }

    pub fn smoothed(pi: &VoteDistribution, radius: usize) -> Result<Self> {
        Self::smoothed_counted(pi, radius, &mut OpCounter::default())
    }

    fn smoothed_counted(pi: &VoteDistribution, radius: usize, ops: &mut OpCounter) -> Result<Self> {
        let k = pi.num_classes();
        let total = pi.num_classifiers();
        let mut lower = Vec::with_capacity(k);
        let mut upper = Vec::with_capacity(k);
        for y in 0..k {
            lower.push(score_of(
                &lower_bound_counts(pi, y, radius, ops)?,
                total,
                y,
                ops,
            ));
            upper.push(score_of(
                &upper_bound_counts(pi, y, radius, ops)?,
                total,
                y,
                ops,
            ));
        }
        Ok(Self { lower, upper })
    }
}

/// Worst-case thresholds of every calibration partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseQuantiles {
    /// Quantile of the per-point score lower bounds.
    pub tau_lower: Vec<f64>,
    /// Quantile of the per-point score upper bounds.
    pub tau_upper: Vec<f64>,
}

impl WorstCaseQuantiles {
    /// Bounds that coincide with the clean thresholds.
    pub fn exact(thresholds: &[f64]) -> Self {
        Self {
            tau_lower: thresholds.to_vec(),
            tau_upper: thresholds.to_vec(),
        }
    }
}

/// Worst-case quantiles under `radius` training edits, with the full budget
/// applied inside every partition.
pub fn worst_case_quantiles(
    calibration: &[VoteDistribution],
    labels: &[usize],
    assignments: &[usize],
    partitions: usize,
    alpha: f64,
    radius: usize,
) -> Result<WorstCaseQuantiles> {
    worst_case_quantiles_counted(
        calibration,
        labels,
        assignments,
        partitions,
        alpha,
        radius,
        &mut OpCounter::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn worst_case_quantiles_counted(
    calibration: &[VoteDistribution],
    labels: &[usize],
    assignments: &[usize],
    partitions: usize,
    alpha: f64,
    radius: usize,
    ops: &mut OpCounter,
) -> Result<WorstCaseQuantiles> {
    if calibration.len() != labels.len() || calibration.len() != assignments.len() {
        return Err(Error::InvalidInput(
            "calibration votes, labels and partition assignments differ in length".into(),
        ));
    }
    let mut lower: Vec<Vec<f64>> = alloc::vec![Vec::new(); partitions];
    let mut upper: Vec<Vec<f64>> = alloc::vec![Vec::new(); partitions];
    for ((pi, &y), &p) in calibration.iter().zip(labels).zip(assignments) {
        if p >= partitions {
            return Err(Error::InvalidInput(alloc::format!(
                "partition {p} out of range"
            )));
        }
        let total = pi.num_classifiers();
        lower[p].push(score_of(
            &lower_bound_counts(pi, y, radius, ops)?,
            total,
            y,
            ops,
        ));
        upper[p].push(score_of(
            &upper_bound_counts(pi, y, radius, ops)?,
            total,
            y,
            ops,
        ));
    }
    let required = min_partition_size(alpha);
    let mut tau_lower = Vec::with_capacity(partitions);
    let mut tau_upper = Vec::with_capacity(partitions);
    for (partition, (lo, hi)) in lower.iter_mut().zip(upper.iter_mut()).enumerate() {
        let rank = quantile_rank(lo.len(), alpha);
        if rank == 0 {
            return Err(Error::InfeasibleCalibration {
                partition,
                size: lo.len(),
                required,
            });
        }
        ops.add(2 * lo.len());
        tau_lower.push(kth_smallest(lo, rank));
        tau_upper.push(kth_smallest(hi, rank));
    }
    Ok(WorstCaseQuantiles {
        tau_lower,
        tau_upper,
    })
}

/// Verdict for a single-partition set under training poisoning only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingVerdict {
    pub coverage_reliable: bool,
    pub size_reliable: bool,
    /// Member with the fewest votes.
    pub weakest: Option<usize>,
    /// Non-member with the most votes.
    pub strongest: Option<usize>,
}

/// Training-poisoning certificate of a plain conformal set `clean_set`
/// calibrated on one partition with worst-case thresholds
/// `tau_lower <= tau <= tau_upper`.
pub fn certify_training(
    clean_set: &PredictionSet,
    pi: &VoteDistribution,
    tau_lower: f64,
    tau_upper: f64,
    radius: usize,
) -> Result<TrainingVerdict> {
    let counts = pi.counts();
    let mut weakest: Option<usize> = None;
    let mut strongest: Option<usize> = None;
    for (y, &c) in counts.iter().enumerate() {
        if clean_set.contains(y) {
            if weakest.is_none_or(|w| c < counts[w]) {
                weakest = Some(y);
            }
        } else if strongest.is_none_or(|s| c > counts[s]) {
            strongest = Some(y);
        }
    }
    let coverage_reliable = match weakest {
        Some(y) => lower_bound_score(pi, y, radius)? >= tau_upper,
        None => true,
    };
    let size_reliable = match strongest {
        Some(y) => upper_bound_score(pi, y, radius)? < tau_lower,
        None => true,
    };
    Ok(TrainingVerdict {
        coverage_reliable,
        size_reliable,
        weakest,
        strongest,
    })
}

/// Whether every partition keeps a non-zero quantile rank after `radius`
/// deletions.
pub fn survives_deletions(partition_sizes: &[usize], radius: usize, alpha: f64) -> bool {
    partition_sizes
        .iter()
        .all(|&n| n >= radius && quantile_rank(n - radius, alpha) >= 1)
}

/// Verdict for a majority set under calibration poisoning only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationVerdict {
    pub coverage_reliable: bool,
    pub size_reliable: bool,
    /// Smallest support among members.
    pub min_member_support: Option<usize>,
    /// Largest support among non-members.
    pub max_outsider_support: Option<usize>,
}

/// Calibration-poisoning certificate from the per-class support (number of
/// partition sets containing each class).
pub fn certify_calibration(
    support: &[usize],
    majority_threshold: usize,
    radius: usize,
    partition_sizes: &[usize],
    alpha: f64,
) -> CalibrationVerdict {
    let min_member_support = support
        .iter()
        .copied()
        .filter(|&m| m > majority_threshold)
        .min();
    let max_outsider_support = support
        .iter()
        .copied()
        .filter(|&m| m <= majority_threshold)
        .max();
    let feasible = survives_deletions(partition_sizes, radius, alpha);
    let coverage_reliable =
        feasible && min_member_support.is_none_or(|m| m > majority_threshold + radius);
    let size_reliable =
        feasible && max_outsider_support.is_none_or(|m| m + radius <= majority_threshold);
    CalibrationVerdict {
        coverage_reliable,
        size_reliable,
        min_member_support,
        max_outsider_support,
    }
}

/// Verdict for a majority set under joint poisoning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointVerdict {
    pub coverage_reliable: bool,
    pub size_reliable: bool,
    pub robust: bool,
    /// Per class: partitions whose set provably keeps the class.
    pub beta: Vec<usize>,
    /// Per class: partitions whose set provably excludes the class.
    pub gamma: Vec<usize>,
}

/// Joint certificate of the clean majority set `clean_set`.
///
/// `test_bounds` are the test point's score bounds under the training
/// radius and `quantiles` the matching worst-case thresholds.
pub fn certify_joint(
    test_bounds: &ScoreBounds,
    quantiles: &WorstCaseQuantiles,
    clean_set: &PredictionSet,
    majority_threshold: usize,
    calibration_radius: usize,
    partition_sizes: &[usize],
    alpha: f64,
) -> JointVerdict {
    let k = test_bounds.lower.len();
    let partitions = quantiles.tau_upper.len();
    let beta: Vec<usize> = (0..k)
        .map(|y| {
            quantiles
                .tau_upper
                .iter()
                .filter(|&&t| test_bounds.lower[y] >= t)
                .count()
        })
        .collect();
    let gamma: Vec<usize> = (0..k)
        .map(|y| {
            quantiles
                .tau_lower
                .iter()
                .filter(|&&t| test_bounds.upper[y] < t)
                .count()
        })
        .collect();
    let feasible = survives_deletions(partition_sizes, calibration_radius, alpha);
    let coverage_reliable = feasible
        && clean_set
            .iter()
            .all(|y| beta[y] > majority_threshold + calibration_radius);
    let size_reliable = feasible
        && (0..k)
            .filter(|&y| !clean_set.contains(y))
            .all(|y| partitions - gamma[y] + calibration_radius <= majority_threshold);
    JointVerdict {
        coverage_reliable,
        size_reliable,
        robust: coverage_reliable && size_reliable,
        beta,
        gamma,
    }
}

/// Recomputes the worst-case quantiles and the test bounds from scratch and
/// certifies one test point, counting elementary steps.
#[allow(clippy::too_many_arguments)]
pub fn certify_joint_counted(
    predictor: &MajorityPredictor,
    calibration: &[VoteDistribution],
    labels: &[usize],
    assignments: &[usize],
    test: &VoteDistribution,
    radius: ThreatRadius,
    ops: &mut OpCounter,
) -> Result<JointVerdict> {
    let quantiles = worst_case_quantiles_counted(
        calibration,
        labels,
        assignments,
        predictor.partition_count(),
        predictor.alpha(),
        radius.training,
        ops,
    )?;
    let clean = predictor.predict_majority(&test.scores())?;
    ops.add(test.num_classes() * predictor.partition_count());
    let bounds = ScoreBounds::smoothed_counted(test, radius.training, ops)?;
    ops.add(2 * test.num_classes() * predictor.partition_count());
    Ok(certify_joint(
        &bounds,
        &quantiles,
        &clean,
        predictor.majority_threshold(),
        radius.calibration,
        predictor.partition_sizes(),
        predictor.alpha(),
    ))
}

/// Flags of one test point at one radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadiusVerdict {
    pub radius: ThreatRadius,
    pub coverage_reliable: bool,
    pub size_reliable: bool,
    pub robust: bool,
}

/// Flags of one test point over a radius grid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdicts: Vec<RadiusVerdict>,
}

impl Certificate {
    pub fn at(&self, radius: ThreatRadius) -> Option<&RadiusVerdict> {
        self.verdicts.iter().find(|v| v.radius == radius)
    }
}

/// Calibration data kept for training-poisoning certificates.
#[derive(Debug, Clone)]
struct TrainingContext {
    num_classifiers: usize,
    quantiles: Vec<WorstCaseQuantiles>,
}

/// Certifies test points against one calibrated predictor.
///
/// Worst-case quantiles depend only on the training radius, so they are
/// computed once per radius up front and shared by every test point.
#[derive(Debug, Clone)]
pub struct Certifier<'a> {
    predictor: &'a MajorityPredictor,
    training: Option<TrainingContext>,
}

impl<'a> Certifier<'a> {
    /// Calibration-poisoning certificates only (`r_t = 0`); works for every
    /// score mode.
    pub fn calibration_only(predictor: &'a MajorityPredictor) -> Self {
        Self {
            predictor,
            training: None,
        }
    }

    /// Prepares training-poisoning certificates up to `max_training_radius`
    /// from the calibration votes the predictor was fit on.
    pub fn with_training(
        predictor: &'a MajorityPredictor,
        calibration_votes: &VoteMatrix,
        labels: &[usize],
        features: &[FeatureVector],
        max_training_radius: usize,
    ) -> Result<Self> {
        if labels.len() != features.len() {
            return Err(Error::InvalidInput(
                "calibration labels and features differ in length".into(),
            ));
        }
        let config = predictor.config();
        let assignments = partition_indices(features, config.partitions, config.hash_mode)?;
        Self::with_training_assignments(
            predictor,
            calibration_votes,
            labels,
            &assignments,
            max_training_radius,
        )
    }

    /// Like [`Certifier::with_training`] with precomputed calibration
    /// partition indices.
    pub fn with_training_assignments(
        predictor: &'a MajorityPredictor,
        calibration_votes: &VoteMatrix,
        labels: &[usize],
        assignments: &[usize],
        max_training_radius: usize,
    ) -> Result<Self> {
        let config = predictor.config();
        if config.score_mode != ScoreMode::Smoothed {
            return Err(Error::UnsupportedMode(config.score_mode));
        }
        if calibration_votes.num_classes() != predictor.num_classes() {
            return Err(Error::InvalidInput(alloc::format!(
                "calibration votes have {} classes, the predictor {}",
                calibration_votes.num_classes(),
                predictor.num_classes()
            )));
        }
        if calibration_votes.len() != labels.len() || labels.len() != assignments.len() {
            return Err(Error::InvalidInput(
                "calibration votes, labels and partition assignments differ in length".into(),
            ));
        }
        let num_classifiers = calibration_votes.num_classifiers();
        if max_training_radius > num_classifiers {
            return Err(Error::InvalidRadius {
                radius: max_training_radius,
                classifiers: num_classifiers,
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= predictor.num_classes()) {
            return Err(Error::ClassOutOfRange {
                class: y,
                classes: predictor.num_classes(),
            });
        }
        let distributions = calibration_votes.distributions();
        let quantiles = (0..=max_training_radius)
            .map(|r| {
                worst_case_quantiles(
                    &distributions,
                    labels,
                    assignments,
                    config.partitions,
                    config.alpha,
                    r,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        if quantiles[0].tau_upper != predictor.thresholds() {
            return Err(Error::InvalidInput(
                "calibration data does not reproduce the predictor's thresholds".into(),
            ));
        }
        Ok(Self {
            predictor,
            training: Some(TrainingContext {
                num_classifiers,
                quantiles,
            }),
        })
    }

    pub fn predictor(&self) -> &MajorityPredictor {
        self.predictor
    }

    pub fn max_training_radius(&self) -> usize {
        self.training.as_ref().map_or(0, |t| t.quantiles.len() - 1)
    }

    /// Certifies the point with clean class scores `scores` (and vote
    /// distribution `pi`, required when `r_t > 0`).
    pub fn certify(
        &self,
        scores: &[f64],
        pi: Option<&VoteDistribution>,
        radius: ThreatRadius,
    ) -> Result<JointVerdict> {
        let predictor = self.predictor;
        let clean = predictor.predict_majority(scores)?;
        let (bounds, quantiles) = if radius.training == 0 {
            (
                ScoreBounds::exact(scores),
                WorstCaseQuantiles::exact(predictor.thresholds()),
            )
        } else {
            if predictor.config().score_mode != ScoreMode::Smoothed {
                return Err(Error::UnsupportedMode(predictor.config().score_mode));
            }
            let training = self.training.as_ref().ok_or_else(|| {
                Error::InvalidConfig(
                    "training radius > 0 needs the calibration votes (Certifier::with_training)"
                        .into(),
                )
            })?;
            if radius.training > training.num_classifiers {
                return Err(Error::InvalidRadius {
                    radius: radius.training,
                    classifiers: training.num_classifiers,
                });
            }
            let quantiles = training.quantiles.get(radius.training).ok_or_else(|| {
                Error::InvalidConfig(alloc::format!(
                    "training radius {} exceeds the prepared maximum {}",
                    radius.training,
                    training.quantiles.len() - 1
                ))
            })?;
            let pi = pi.ok_or_else(|| {
                Error::InvalidInput("training radius > 0 needs the test point's votes".into())
            })?;
            if pi.num_classifiers() != training.num_classifiers {
                return Err(Error::InvalidInput(alloc::format!(
                    "test votes come from {} classifiers, calibration votes from {}",
                    pi.num_classifiers(),
                    training.num_classifiers
                )));
            }
            (
                ScoreBounds::smoothed(pi, radius.training)?,
                quantiles.clone(),
            )
        };
        Ok(certify_joint(
            &bounds,
            &quantiles,
            &clean,
            predictor.majority_threshold(),
            radius.calibration,
            predictor.partition_sizes(),
            predictor.alpha(),
        ))
    }

    pub fn certify_grid(
        &self,
        scores: &[f64],
        pi: Option<&VoteDistribution>,
        radii: &[ThreatRadius],
    ) -> Result<Certificate> {
        let verdicts = radii
            .iter()
            .map(|&radius| {
                self.certify(scores, pi, radius).map(|v| RadiusVerdict {
                    radius,
                    coverage_reliable: v.coverage_reliable,
                    size_reliable: v.size_reliable,
                    robust: v.robust,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Certificate { verdicts })
    }
}
