use alloc::vec::Vec;

use crate::certify::WorstCaseQuantiles;
use crate::error::{Error, Result};
use crate::score::{softmax_at, VoteDistribution};

use super::naive_quantile;

/// Largest `(k_t, K)` accepted by [`brute_force_score_bounds`].
pub const BRUTE_FORCE_LIMITS: (usize, usize) = (6, 5);

/// All count vectors of length `classes` summing to `total`, in
/// lexicographic order.
pub(crate) fn compositions(total: u32, classes: usize) -> Vec<Vec<u32>> {
    fn go(rest: u32, slots: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slots == 1 {
            prefix.push(rest);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=rest {
            prefix.push(c);
            go(rest - c, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if classes > 0 {
        go(total, classes, &mut Vec::with_capacity(classes), &mut out);
    }
    out
}

/// Exact extrema `(min, max)` of the smoothed score of `y` over every vote
/// vector reachable by reassigning at most `radius` classifiers.
///
/// Enumerates all count vectors with the same total and keeps those that
/// differ from `pi` by at most `radius` moved votes.
pub fn brute_force_score_bounds(
    pi: &VoteDistribution,
    y: usize,
    radius: usize,
) -> Result<(f64, f64)> {
    let k_t = pi.num_classifiers();
    let classes = pi.num_classes();
    if k_t > BRUTE_FORCE_LIMITS.0 || classes > BRUTE_FORCE_LIMITS.1 {
        return Err(Error::InstanceTooLarge(alloc::format!(
            "brute force needs k_t <= {} and K <= {}, got k_t = {k_t}, K = {classes}",
            BRUTE_FORCE_LIMITS.0,
            BRUTE_FORCE_LIMITS.1
        )));
    }
    if y >= classes {
        return Err(Error::ClassOutOfRange { class: y, classes });
    }
    if radius > k_t {
        return Err(Error::InvalidRadius {
            radius,
            classifiers: k_t,
        });
    }
    let clean = pi.counts();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for counts in compositions(k_t as u32, classes) {
        let moved: u32 = counts
            .iter()
            .zip(clean)
            .map(|(&c, &c0)| c0.saturating_sub(c))
            .sum();
        if moved as usize > radius {
            continue;
        }
        let s = softmax_at(&counts, k_t as u32, y);
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok((lo, hi))
}

/// Worst-case quantiles from brute-force bounds and sorting.
pub fn naive_worst_case_quantiles(
    calibration: &[VoteDistribution],
    labels: &[usize],
    assignments: &[usize],
    partitions: usize,
    alpha: f64,
    radius: usize,
) -> Result<WorstCaseQuantiles> {
    let mut lower = alloc::vec![Vec::new(); partitions];
    let mut upper = alloc::vec![Vec::new(); partitions];
    for ((pi, &y), &p) in calibration.iter().zip(labels).zip(assignments) {
        let (lo, hi) = brute_force_score_bounds(pi, y, radius)?;
        lower[p].push(lo);
        upper[p].push(hi);
    }
    let mut out = WorstCaseQuantiles {
        tau_lower: Vec::new(),
        tau_upper: Vec::new(),
    };
    for (partition, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
        let infeasible = || Error::InfeasibleCalibration {
            partition,
            size: lo.len(),
            required: crate::conformal::min_partition_size(alpha),
        };
        out.tau_lower
            .push(naive_quantile(lo, alpha).ok_or_else(infeasible)?);
        out.tau_upper
            .push(naive_quantile(hi, alpha).ok_or_else(infeasible)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn composition_count() {
        // C(n + k - 1, k - 1)
        assert_eq!(compositions(3, 3).len(), 10);
        assert_eq!(compositions(5, 4).len(), 56);
        assert_eq!(compositions(0, 2), vec![vec![0, 0]]);
    }

    #[test]
    fn zero_radius_is_clean_score() {
        let pi = VoteDistribution::from_counts(vec![2, 1, 0]).unwrap();
        let s = pi.score(1).unwrap();
        assert_eq!(brute_force_score_bounds(&pi, 1, 0).unwrap(), (s, s));
    }

    #[test]
    fn single_reassignment_maximum() {
        let pi = VoteDistribution::from_counts(vec![2, 1, 0]).unwrap();
        let (_, hi) = brute_force_score_bounds(&pi, 2, 1).unwrap();
        assert!((hi - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn guard() {
        let pi = VoteDistribution::from_counts(vec![7, 0]).unwrap();
        assert!(matches!(
            brute_force_score_bounds(&pi, 0, 1),
            Err(Error::InstanceTooLarge(_))
        ));
        let pi = VoteDistribution::from_counts(vec![1, 0, 0, 0, 0, 0]).unwrap();
        assert!(matches!(
            brute_force_score_bounds(&pi, 0, 1),
            Err(Error::InstanceTooLarge(_))
        ));
    }
}
