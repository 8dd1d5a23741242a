//! Conformal score functions.
//!
//! Scores follow the "higher is more conforming" convention: a class enters a
//! prediction set when its score reaches the calibrated threshold.

use alloc::vec::Vec;
use core::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{hash_feature, FeatureVector, HashMode};

/// Name of the generator behind [`reproducible_u`]. Changing the generator
/// or the float conversion requires a new name.
pub const APS_GENERATOR: &str = "chacha8/seed_from_u64/u53-v1";

/// Tolerance on probability rows summing to one.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Softmax over the ensemble vote distribution.
    #[default]
    Smoothed,
    /// Class probability of a soft classifier.
    Hps,
    /// Adaptive prediction sets with a per-input pseudo-random tie breaker.
    Aps,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Smoothed => "smoothed",
            ScoreMode::Hps => "hps",
            ScoreMode::Aps => "aps",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoothed" => Ok(ScoreMode::Smoothed),
            "hps" => Ok(ScoreMode::Hps),
            "aps" => Ok(ScoreMode::Aps),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown score mode `{other}` (expected smoothed, hps or aps)"
            ))),
        }
    }
}

/// Predicted class of every classifier on every point, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteMatrix {
    num_classes: usize,
    num_classifiers: usize,
    votes: Vec<usize>,
}

impl VoteMatrix {
    pub fn new(num_classes: usize, num_classifiers: usize, votes: Vec<usize>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidConfig(
                "at least two classes are required".into(),
            ));
        }
        if num_classifiers == 0 {
            return Err(Error::InvalidConfig(
                "at least one classifier is required".into(),
            ));
        }
        if votes.len() % num_classifiers != 0 {
            return Err(Error::InvalidInput(alloc::format!(
                "{} votes do not fill rows of {num_classifiers} classifiers",
                votes.len()
            )));
        }
        if let Some(&class) = votes.iter().find(|&&v| v >= num_classes) {
            return Err(Error::ClassOutOfRange {
                class,
                classes: num_classes,
            });
        }
        Ok(Self {
            num_classes,
            num_classifiers,
            votes,
        })
    }

    pub fn from_rows(num_classes: usize, rows: &[Vec<usize>]) -> Result<Self> {
        let num_classifiers = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_classifiers) {
            return Err(Error::InvalidInput(
                "vote rows have different lengths".into(),
            ));
        }
        Self::new(num_classes, num_classifiers, rows.concat())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_classifiers(&self) -> usize {
        self.num_classifiers
    }

    pub fn len(&self) -> usize {
        self.votes.len() / self.num_classifiers
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    pub fn row(&self, point: usize) -> &[usize] {
        let k = self.num_classifiers;
        &self.votes[point * k..(point + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.votes.chunks_exact(self.num_classifiers)
    }

    pub fn distribution(&self, point: usize) -> VoteDistribution {
        // Rows are validated on construction.
        VoteDistribution::from_votes(self.row(point), self.num_classes)
            .expect("vote matrix rows are valid")
    }

    pub fn distributions(&self) -> Vec<VoteDistribution> {
        (0..self.len()).map(|i| self.distribution(i)).collect()
    }
}

/// Fraction of classifiers voting for each class, kept as exact integer
/// counts over the number of classifiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoteDistribution {
    counts: Vec<u32>,
    num_classifiers: u32,
}

impl VoteDistribution {
    pub fn from_votes(votes: &[usize], num_classes: usize) -> Result<Self> {
        if votes.is_empty() {
            return Err(Error::InvalidInput("vote row is empty".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidConfig(
                "at least two classes are required".into(),
            ));
        }
        let mut counts = alloc::vec![0u32; num_classes];
        for &v in votes {
            if v >= num_classes {
                return Err(Error::ClassOutOfRange {
                    class: v,
                    classes: num_classes,
                });
            }
            counts[v] += 1;
        }
        Ok(Self {
            counts,
            num_classifiers: votes.len() as u32,
        })
    }

    pub fn from_counts(counts: Vec<u32>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidConfig(
                "at least two classes are required".into(),
            ));
        }
        let total: u32 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidInput("vote counts are all zero".into()));
        }
        Ok(Self {
            counts,
            num_classifiers: total,
        })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn num_classifiers(&self) -> usize {
        self.num_classifiers as usize
    }

    /// Vote fraction of class `y`.
    pub fn fraction(&self, y: usize) -> f64 {
        f64::from(self.counts[y]) / f64::from(self.num_classifiers)
    }

    pub fn fractions(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|y| self.fraction(y)).collect()
    }

    pub fn score(&self, y: usize) -> Result<f64> {
        smoothed_score(self, y)
    }

    pub fn scores(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|y| softmax_at(&self.counts, self.num_classifiers, y))
            .collect()
    }
}

pub fn vote_distribution(votes: &[usize], num_classes: usize) -> Result<VoteDistribution> {
    VoteDistribution::from_votes(votes, num_classes)
}

/// Smoothed score `exp(pi_y) / sum_i exp(pi_i)`.
pub fn smoothed_score(pi: &VoteDistribution, y: usize) -> Result<f64> {
    check_class(y, pi.num_classes())?;
    Ok(softmax_at(&pi.counts, pi.num_classifiers, y))
}

/// Softmax of `counts / total` at class `y`.
///
/// The denominator is summed in ascending order of the counts, so the value
/// is bit-identical for any permutation of the other classes. Bound
/// algorithms and the brute-force oracle depend on this to agree exactly.
pub(crate) fn softmax_at(counts: &[u32], total: u32, y: usize) -> f64 {
    let total = f64::from(total);
    let max = counts.iter().copied().max().unwrap_or(0);
    let term = |c: u32| libm::exp((f64::from(c) - f64::from(max)) / total);
    let mut sorted: Vec<u32> = counts.to_vec();
    sorted.sort_unstable();
    let denom: f64 = sorted.into_iter().map(term).sum();
    term(counts[y]) / denom
}

/// Per-point class probabilities of a soft classifier, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    num_classes: usize,
    probs: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn new(num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidConfig(
                "at least two classes are required".into(),
            ));
        }
        if probs.len() % num_classes != 0 {
            return Err(Error::InvalidInput(alloc::format!(
                "{} probabilities do not fill rows of {num_classes} classes",
                probs.len()
            )));
        }
        for (i, row) in probs.chunks_exact(num_classes).enumerate() {
            check_probability_row(row).map_err(|e| match e {
                Error::InvalidInput(msg) => Error::InvalidInput(alloc::format!("row {i}: {msg}")),
                other => other,
            })?;
        }
        Ok(Self { num_classes, probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput(
                "probability rows have different lengths".into(),
            ));
        }
        Self::new(k, rows.concat())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn row(&self, point: usize) -> &[f64] {
        let k = self.num_classes;
        &self.probs[point * k..(point + 1) * k]
    }
}

fn check_probability_row(row: &[f64]) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidInput(
            "probabilities must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = row.iter().sum();
    if libm::fabs(sum - 1.0) > PROBABILITY_TOLERANCE {
        return Err(Error::InvalidInput(alloc::format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

fn check_class(y: usize, classes: usize) -> Result<()> {
    if y >= classes {
        return Err(Error::ClassOutOfRange { class: y, classes });
    }
    Ok(())
}

/// Homogeneous prediction set score: the class probability itself.
pub fn hps_score(probs: &[f64], y: usize) -> Result<f64> {
    check_class(y, probs.len())?;
    Ok(probs[y])
}

/// APS score `-(sum of probabilities strictly above p_y + u * p_y)`.
pub fn aps_score(probs: &[f64], y: usize, u: f64) -> Result<f64> {
    check_class(y, probs.len())?;
    let py = probs[y];
    let above: f64 = probs.iter().filter(|&&p| p > py).sum();
    Ok(-(above + u * py))
}

/// Pseudo-random `u` in `[0, 1)` derived from a feature hash.
///
/// One 64-bit draw from ChaCha8 seeded with the hash; the top 53 bits become
/// the mantissa.
pub fn reproducible_u(hash: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(hash);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// APS score whose tie breaker is fixed by the point's features.
pub fn reproducible_aps_score(
    probs: &[f64],
    y: usize,
    x: &FeatureVector,
    mode: HashMode,
) -> Result<f64> {
    let u = reproducible_u(hash_feature(x, mode)?);
    aps_score(probs, y, u)
}

/// Where the per-class scores of a set of points come from.
#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    Votes(&'a VoteMatrix),
    Probabilities(&'a ProbabilityMatrix),
}

impl<'a> ScoreSource<'a> {
    pub fn len(&self) -> usize {
        match self {
            ScoreSource::Votes(v) => v.len(),
            ScoreSource::Probabilities(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ScoreSource::Votes(v) => v.num_classes(),
            ScoreSource::Probabilities(p) => p.num_classes(),
        }
    }

    pub fn check_mode(&self, mode: ScoreMode) -> Result<()> {
        match (self, mode) {
            (ScoreSource::Votes(_), ScoreMode::Smoothed)
            | (ScoreSource::Probabilities(_), ScoreMode::Hps | ScoreMode::Aps) => Ok(()),
            (ScoreSource::Votes(_), m) => Err(Error::InvalidConfig(alloc::format!(
                "score mode `{m}` needs class probabilities, got votes"
            ))),
            (ScoreSource::Probabilities(_), m) => Err(Error::InvalidConfig(alloc::format!(
                "score mode `{m}` needs votes, got class probabilities"
            ))),
        }
    }

    /// Score of `point` for class `y`. `features` is only read in APS mode.
    pub fn score(
        &self,
        mode: ScoreMode,
        point: usize,
        y: usize,
        features: Option<&FeatureVector>,
        hash_mode: HashMode,
    ) -> Result<f64> {
        self.check_mode(mode)?;
        match (self, mode) {
            (ScoreSource::Votes(v), _) => smoothed_score(&v.distribution(point), y),
            (ScoreSource::Probabilities(p), ScoreMode::Hps) => hps_score(p.row(point), y),
            (ScoreSource::Probabilities(p), _) => {
                let x = features.ok_or_else(|| {
                    Error::InvalidInput("APS scoring needs the point's features".into())
                })?;
                reproducible_aps_score(p.row(point), y, x, hash_mode)
            }
        }
    }

    /// Scores of `point` for every class.
    pub fn scores(
        &self,
        mode: ScoreMode,
        point: usize,
        features: Option<&FeatureVector>,
        hash_mode: HashMode,
    ) -> Result<Vec<f64>> {
        self.check_mode(mode)?;
        match (self, mode) {
            (ScoreSource::Votes(v), _) => Ok(v.distribution(point).scores()),
            (ScoreSource::Probabilities(p), ScoreMode::Hps) => Ok(p.row(point).to_vec()),
            (ScoreSource::Probabilities(p), _) => {
                let x = features.ok_or_else(|| {
                    Error::InvalidInput("APS scoring needs the point's features".into())
                })?;
                let u = reproducible_u(hash_feature(x, hash_mode)?);
                (0..p.num_classes())
                    .map(|y| aps_score(p.row(point), y, u))
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn unanimous_votes() {
        let pi = vote_distribution(&[2, 2, 2, 2], 3).unwrap();
        assert_eq!(pi.fractions(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn symmetric_votes() {
        let pi = vote_distribution(&[0, 1, 2], 3).unwrap();
        for y in 0..3 {
            assert_eq!(pi.fraction(y), 1.0 / 3.0);
        }
    }

    #[test]
    fn direct_count() {
        let mut votes = vec![0; 61];
        votes.extend(vec![1; 25]);
        votes.extend(vec![2; 14]);
        let pi = vote_distribution(&votes, 3).unwrap();
        assert_eq!(pi.fractions(), vec![0.61, 0.25, 0.14]);
    }

    #[test]
    fn vote_errors() {
        assert!(matches!(
            vote_distribution(&[], 3),
            Err(Error::InvalidInput(_))
        ));
        assert_eq!(
            vote_distribution(&[0, 3], 3),
            Err(Error::ClassOutOfRange {
                class: 3,
                classes: 3
            })
        );
    }

    #[test]
    fn uniform_scores_are_one_over_k() {
        let pi = vote_distribution(&[0, 1, 2, 3], 4).unwrap();
        for y in 0..4 {
            assert!(close(smoothed_score(&pi, y).unwrap(), 0.25, 1e-15));
        }
    }

    #[test]
    fn two_class_closed_form() {
        let pi = vote_distribution(&[0, 0], 2).unwrap();
        let e = core::f64::consts::E;
        assert!(close(smoothed_score(&pi, 0).unwrap(), e / (e + 1.0), 1e-15));
        assert!(close(0.731_058_578_630_004_9, e / (e + 1.0), 1e-15));
    }

    #[test]
    fn smoothed_score_errors() {
        let pi = vote_distribution(&[0, 1], 2).unwrap();
        assert_eq!(
            smoothed_score(&pi, 2),
            Err(Error::ClassOutOfRange {
                class: 2,
                classes: 2
            })
        );
    }

    #[test]
    fn softmax_is_permutation_invariant_bitwise() {
        let a = softmax_at(&[2, 1, 1], 4, 1);
        let b = softmax_at(&[1, 2, 1], 4, 0);
        let c = softmax_at(&[1, 1, 2], 4, 1);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn hps_reads_probability() {
        assert_eq!(hps_score(&[1.0, 0.0, 0.0], 0), Ok(1.0));
        assert_eq!(hps_score(&[0.2, 0.3, 0.5], 2), Ok(0.5));
        assert!(hps_score(&[0.2, 0.8], 2).is_err());
    }

    #[test]
    fn aps_hand_evaluation() {
        let s = aps_score(&[0.5, 0.3, 0.2], 1, 0.5).unwrap();
        assert!(close(s, -0.65, 1e-15));
        // u = 1 gives the cumulative mass down to and including y.
        assert!(close(
            aps_score(&[0.5, 0.3, 0.2], 2, 1.0).unwrap(),
            -1.0,
            1e-15
        ));
        assert!(close(
            aps_score(&[0.5, 0.3, 0.2], 0, 1.0).unwrap(),
            -0.5,
            1e-15
        ));
    }

    #[test]
    fn reproducible_aps_single_mass() {
        let x = FeatureVector::new(vec![0.25, 4.0]).unwrap();
        let u = reproducible_u(hash_feature(&x, HashMode::ByteHash).unwrap());
        assert!((0.0..1.0).contains(&u));
        let s = reproducible_aps_score(&[1.0, 0.0, 0.0], 0, &x, HashMode::ByteHash).unwrap();
        assert_eq!(s, -u);
        let again = reproducible_aps_score(&[1.0, 0.0, 0.0], 0, &x, HashMode::ByteHash).unwrap();
        assert_eq!(s.to_bits(), again.to_bits());
    }

    #[test]
    fn probability_rows_are_validated() {
        assert!(ProbabilityMatrix::new(3, vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0]).is_ok());
        assert!(ProbabilityMatrix::new(3, vec![0.2, 0.3, 0.4]).is_err());
        assert!(ProbabilityMatrix::new(2, vec![-0.5, 1.5]).is_err());
        assert!(ProbabilityMatrix::new(3, vec![0.2, 0.8]).is_err());
    }

    #[test]
    fn source_mode_mismatch() {
        let votes = VoteMatrix::new(2, 1, vec![0, 1]).unwrap();
        let src = ScoreSource::Votes(&votes);
        assert!(src.check_mode(ScoreMode::Smoothed).is_ok());
        assert!(matches!(
            src.check_mode(ScoreMode::Hps),
            Err(Error::InvalidConfig(_))
        ));
    }
}
