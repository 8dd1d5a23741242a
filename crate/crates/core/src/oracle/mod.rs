//! Independent checks for the bound algorithms and the certificates.
//!
//! Nothing here is used by the prediction or certification path. The
//! brute-force bounds enumerate every reachable vote vector, and the attack
//! search replays concrete poisoning edits through a naive sort-and-index
//! pipeline, so a certified flag that an attack breaks is a real soundness
//! failure.

mod attack;
mod bounds;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use self::attack::{
    attack_search, falsify, AttackBudget, AttackInstance, AttackReport, Falsification, Objective,
    SearchMode, EXHAUSTIVE_LIMITS,
};
pub use self::bounds::{brute_force_score_bounds, naive_worst_case_quantiles, BRUTE_FORCE_LIMITS};

use crate::partition::FeatureVector;

/// One calibration-set edit. Every variant costs one unit of budget; a
/// feature change is a delete plus an insert and costs two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetEdit {
    Delete {
        point: usize,
    },
    Flip {
        point: usize,
        label: usize,
    },
    /// A new point hashed into `partition` whose score at its label is
    /// `score`.
    Insert {
        partition: usize,
        score: f64,
    },
}

impl DatasetEdit {
    pub fn cost(&self) -> usize {
        1
    }
}

/// Total cost of an edit sequence.
pub fn edit_cost(edits: &[DatasetEdit]) -> usize {
    edits.iter().map(DatasetEdit::cost).sum()
}

/// Edit distance between two labelled datasets: size of the symmetric
/// difference, with a relabelled point counted once.
pub fn dataset_distance(a: &[(FeatureVector, usize)], b: &[(FeatureVector, usize)]) -> usize {
    let key = |x: &FeatureVector| x.values().iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let mut balance: BTreeMap<(Vec<u64>, usize), isize> = BTreeMap::new();
    for (x, y) in a {
        *balance.entry((key(x), *y)).or_default() += 1;
    }
    for (x, y) in b {
        *balance.entry((key(x), *y)).or_default() -= 1;
    }
    // Per feature vector: points only in `a` and points only in `b`.
    let mut per_feature: BTreeMap<Vec<u64>, (usize, usize)> = BTreeMap::new();
    for ((x, _), d) in balance {
        let entry = per_feature.entry(x).or_default();
        if d > 0 {
            entry.0 += d as usize;
        } else {
            entry.1 += (-d) as usize;
        }
    }
    per_feature
        .values()
        .map(|&(only_a, only_b)| only_a + only_b - only_a.min(only_b))
        .sum()
}

/// Conformal threshold by sorting: the `floor(alpha (n + 1))`-th smallest
/// score, or `None` when that rank is zero.
pub fn naive_quantile(scores: &[f64], alpha: f64) -> Option<f64> {
    let rank = libm::floor(alpha * (scores.len() as f64 + 1.0)) as usize;
    if rank == 0 {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.get(rank - 1).copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn point(v: f64, y: usize) -> (FeatureVector, usize) {
        (FeatureVector::new(vec![v]).unwrap(), y)
    }

    #[test]
    fn flip_costs_one() {
        let a = vec![point(1.0, 0), point(2.0, 1)];
        let b = vec![point(1.0, 1), point(2.0, 1)];
        assert_eq!(dataset_distance(&a, &b), 1);
    }

    #[test]
    fn feature_change_costs_two() {
        let a = vec![point(1.0, 0), point(2.0, 1)];
        let b = vec![point(1.5, 0), point(2.0, 1)];
        assert_eq!(dataset_distance(&a, &b), 2);
    }

    #[test]
    fn insert_and_delete_cost_one() {
        let a = vec![point(1.0, 0)];
        let b = vec![point(1.0, 0), point(3.0, 2)];
        assert_eq!(dataset_distance(&a, &b), 1);
        assert_eq!(dataset_distance(&b, &a), 1);
        assert_eq!(dataset_distance(&a, &a), 0);
    }

    #[test]
    fn duplicate_points_are_a_multiset() {
        let a = vec![point(1.0, 0), point(1.0, 0)];
        let b = vec![point(1.0, 0), point(1.0, 1)];
        assert_eq!(dataset_distance(&a, &b), 1);
    }

    #[test]
    fn edits_cost_one_each() {
        let edits = [
            DatasetEdit::Delete { point: 0 },
            DatasetEdit::Flip { point: 1, label: 2 },
            DatasetEdit::Insert {
                partition: 0,
                score: 0.5,
            },
        ];
        assert_eq!(edit_cost(&edits), 3);
    }

    #[test]
    fn naive_quantile_indexes_sorted_scores() {
        let scores = [0.5, 0.1, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6];
        assert_eq!(naive_quantile(&scores, 0.1), Some(0.1));
        assert_eq!(naive_quantile(&scores, 0.2), Some(0.2));
        assert_eq!(naive_quantile(&scores[..8], 0.1), None);
    }
}
