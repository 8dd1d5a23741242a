//! Attack search over concrete poisoning edits.
//!
//! Training edits: `r_t` edits corrupt at most `r_t` of the `k_t`
//! classifiers, and a corrupted classifier may vote arbitrarily on every
//! point. The search fixes one set of corrupted classifiers and, since
//! thresholds are order statistics, only needs the extreme reassignment per
//! point: calibration scores pushed up and the test score pushed down to
//! remove a class, the reverse to add one.
//!
//! Calibration edits: deletes, label flips and inserts. Inserted points get
//! arbitrary scores from a grid that covers every order-distinct placement
//! relative to the existing scores. Every edit lands in one partition, so
//! the cheapest way to move each partition is found separately and the
//! cheapest partitions are combined.
//!
//! A successful plan is replayed through a naive sort-and-index pipeline
//! before it is reported. A pipeline that becomes infeasible (a partition
//! too small for its quantile) counts as a successful attack.

use alloc::string::String;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bounds::compositions;
use super::{naive_quantile, DatasetEdit};
use crate::binomial::{binomial_majority_threshold, check_alpha};
use crate::certify::ThreatRadius;
use crate::conformal::PredictionSet;
use crate::error::{Error, Result};
use crate::score::{softmax_at, VoteMatrix};

/// Instance size up to which the search is exhaustive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchLimits {
    pub calibration_points: usize,
    pub classifiers: usize,
    pub classes: usize,
    pub calibration_radius: usize,
}

pub const EXHAUSTIVE_LIMITS: SearchLimits = SearchLimits {
    calibration_points: 30,
    classifiers: 4,
    classes: 5,
    calibration_radius: 2,
};

// Reassignment vectors enumerated per point in randomized mode.
const MAX_REASSIGNMENTS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackBudget {
    pub radius: ThreatRadius,
    pub seed: u64,
    /// Candidate attacks tried in randomized mode.
    pub max_trials: u64,
}

impl AttackBudget {
    pub fn new(radius: ThreatRadius) -> Self {
        Self {
            radius,
            seed: 0,
            max_trials: 10_000,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_trials(mut self, max_trials: u64) -> Self {
        self.max_trials = max_trials;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Drop a class that the clean majority set contains.
    RemoveClass,
    /// Add a class that the clean majority set lacks.
    AddClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    Randomized,
}

/// A smoothed-score pipeline with per-classifier votes: calibration points
/// with labels and partitions, and one test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackInstance {
    alpha: f64,
    partitions: usize,
    majority_threshold: usize,
    calibration: VoteMatrix,
    labels: Vec<usize>,
    assignments: Vec<usize>,
    test: Vec<usize>,
}

impl AttackInstance {
    pub fn new(
        calibration: VoteMatrix,
        labels: Vec<usize>,
        assignments: Vec<usize>,
        partitions: usize,
        alpha: f64,
        test: Vec<usize>,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let k = calibration.num_classes();
        if labels.len() != calibration.len() || assignments.len() != calibration.len() {
            return Err(Error::InvalidInput(
                "calibration votes, labels and assignments differ in length".into(),
            ));
        }
        if test.len() != calibration.num_classifiers() {
            return Err(Error::InvalidInput(alloc::format!(
                "test point has {} votes, expected {}",
                test.len(),
                calibration.num_classifiers()
            )));
        }
        if let Some(&c) = labels.iter().chain(&test).find(|&&c| c >= k) {
            return Err(Error::ClassOutOfRange {
                class: c,
                classes: k,
            });
        }
        if let Some(&p) = assignments.iter().find(|&&p| p >= partitions) {
            return Err(Error::InvalidInput(alloc::format!(
                "partition {p} out of range"
            )));
        }
        let majority_threshold = binomial_majority_threshold(alpha, partitions)?;
        let instance = Self {
            alpha,
            partitions,
            majority_threshold,
            calibration,
            labels,
            assignments,
            test,
        };
        for (partition, points) in instance.members().iter().enumerate() {
            if naive_quantile(&alloc::vec![0.0; points.len()], alpha).is_none() {
                return Err(Error::InfeasibleCalibration {
                    partition,
                    size: points.len(),
                    required: crate::conformal::min_partition_size(alpha),
                });
            }
        }
        Ok(instance)
    }

    /// Replaces the majority threshold, e.g. to study a miscalibrated one.
    pub fn with_majority_threshold(mut self, majority_threshold: usize) -> Self {
        self.majority_threshold = majority_threshold;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.calibration.num_classes()
    }

    pub fn num_classifiers(&self) -> usize {
        self.calibration.num_classifiers()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn majority_threshold(&self) -> usize {
        self.majority_threshold
    }

    pub fn calibration(&self) -> &VoteMatrix {
        &self.calibration
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    /// Majority set of the unpoisoned pipeline.
    pub fn clean_set(&self) -> PredictionSet {
        let scenario = Scenario::build(self, &[], Objective::RemoveClass, 0);
        run_pipeline(self, &scenario, &[]).expect("instance feasibility is checked on construction")
    }

    /// FNV-1a over every field.
    pub fn hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write_u64(self.alpha.to_bits());
        for v in [
            self.partitions,
            self.majority_threshold,
            self.num_classes(),
            self.num_classifiers(),
        ] {
            h.write_u64(v as u64);
        }
        for row in self.calibration.rows() {
            for &v in row {
                h.write_u64(v as u64);
            }
        }
        for &v in self
            .labels
            .iter()
            .chain(&self.assignments)
            .chain(&self.test)
        {
            h.write_u64(v as u64);
        }
        h.finish()
    }

    fn members(&self) -> Vec<Vec<usize>> {
        let mut out = alloc::vec![Vec::new(); self.partitions];
        for (j, &p) in self.assignments.iter().enumerate() {
            out[p].push(j);
        }
        out
    }

    fn partition_of(&self, edit: &DatasetEdit) -> usize {
        match *edit {
            DatasetEdit::Delete { point } | DatasetEdit::Flip { point, .. } => {
                self.assignments[point]
            }
            DatasetEdit::Insert { partition, .. } => partition,
        }
    }

    fn is_exhaustive(&self, budget: &AttackBudget) -> bool {
        let l = EXHAUSTIVE_LIMITS;
        self.len() <= l.calibration_points
            && self.num_classifiers() <= l.classifiers
            && self.num_classes() <= l.classes
            && budget.radius.calibration <= l.calibration_radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub instance_hash: String,
    pub budget: AttackBudget,
    pub objective: Objective,
    pub class: usize,
    pub found: bool,
    pub mode: SearchMode,
    /// Candidate attacks evaluated.
    pub trials: u64,
    pub corrupted_classifiers: Vec<usize>,
    pub edits: Vec<DatasetEdit>,
    /// Set after the reported attack (the clean set when none was found);
    /// `None` when the attacked pipeline is infeasible.
    pub resulting_set: Option<PredictionSet>,
}

/// Adversarial scores for one choice of corrupted classifiers.
struct Scenario {
    /// Per calibration point and class.
    calibration: Vec<Vec<f64>>,
    test_scores: Vec<f64>,
}

impl Scenario {
    fn build(
        inst: &AttackInstance,
        corrupted: &[usize],
        objective: Objective,
        class: usize,
    ) -> Self {
        let k = inst.num_classes();
        let total = inst.num_classifiers() as u32;
        let additions = compositions(corrupted.len() as u32, k);
        let raise_calibration = objective == Objective::RemoveClass;
        let calibration = inst
            .calibration
            .rows()
            .map(|row| {
                let base = base_counts(row, corrupted, k);
                (0..k)
                    .map(|l| extreme(&base, &additions, total, l, raise_calibration).0)
                    .collect()
            })
            .collect();
        let base = base_counts(&inst.test, corrupted, k);
        let (_, test_counts) = extreme(&base, &additions, total, class, !raise_calibration);
        let test_scores = (0..k).map(|c| softmax_at(&test_counts, total, c)).collect();
        Self {
            calibration,
            test_scores,
        }
    }
}

fn base_counts(row: &[usize], corrupted: &[usize], k: usize) -> Vec<u32> {
    let mut counts = alloc::vec![0u32; k];
    for (m, &v) in row.iter().enumerate() {
        if !corrupted.contains(&m) {
            counts[v] += 1;
        }
    }
    counts
}

fn extreme(
    base: &[u32],
    additions: &[Vec<u32>],
    total: u32,
    y: usize,
    maximize: bool,
) -> (f64, Vec<u32>) {
    let mut best: Option<(f64, Vec<u32>)> = None;
    for add in additions {
        let counts: Vec<u32> = base.iter().zip(add).map(|(a, b)| a + b).collect();
        let s = softmax_at(&counts, total, y);
        let better = match &best {
            None => true,
            Some((b, _)) => (maximize && s > *b) || (!maximize && s < *b),
        };
        if better {
            best = Some((s, counts));
        }
    }
    best.expect("at least one reassignment")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Infeasible,
    Included,
    Excluded,
}

fn partition_scores(
    inst: &AttackInstance,
    sc: &Scenario,
    points: &[usize],
    edits: &[DatasetEdit],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len() + edits.len());
    for &j in points {
        let mut label = inst.labels[j];
        let mut deleted = false;
        for e in edits {
            match *e {
                DatasetEdit::Delete { point } if point == j => deleted = true,
                DatasetEdit::Flip { point, label: l } if point == j => label = l,
                _ => {}
            }
        }
        if !deleted {
            out.push(sc.calibration[j][label]);
        }
    }
    for e in edits {
        if let DatasetEdit::Insert { score, .. } = *e {
            out.push(score);
        }
    }
    out
}

fn outcome(scores: &[f64], alpha: f64, test_score: f64) -> Outcome {
    match naive_quantile(scores, alpha) {
        None => Outcome::Infeasible,
        Some(tau) if test_score >= tau => Outcome::Included,
        Some(_) => Outcome::Excluded,
    }
}

/// Full pipeline on the attacked data; `None` when a partition is
/// infeasible.
fn run_pipeline(
    inst: &AttackInstance,
    sc: &Scenario,
    edits: &[DatasetEdit],
) -> Option<PredictionSet> {
    let k = inst.num_classes();
    let mut support = alloc::vec![0usize; k];
    for (i, points) in inst.members().iter().enumerate() {
        let local: Vec<DatasetEdit> = edits
            .iter()
            .copied()
            .filter(|e| inst.partition_of(e) == i)
            .collect();
        let tau = naive_quantile(&partition_scores(inst, sc, points, &local), inst.alpha)?;
        for (c, s) in support.iter_mut().enumerate() {
            if sc.test_scores[c] >= tau {
                *s += 1;
            }
        }
    }
    Some(PredictionSet::new(
        (0..k)
            .filter(|&c| support[c] > inst.majority_threshold)
            .collect(),
    ))
}

fn achieved(objective: Objective, class: usize, result: &Option<PredictionSet>) -> bool {
    match (result, objective) {
        (None, _) => true,
        (Some(set), Objective::RemoveClass) => !set.contains(class),
        (Some(set), Objective::AddClass) => set.contains(class),
    }
}

/// Scores an inserted point may take: every relevant value, both outer
/// extremes, midpoints and immediate neighbours, plus 0 and 1.
fn insert_grid(mut values: Vec<f64>) -> Vec<f64> {
    values.push(0.0);
    values.push(1.0);
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut grid = values.clone();
    grid.push(values[0] - 1.0);
    grid.push(values[values.len() - 1] + 1.0);
    for w in values.windows(2) {
        grid.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    for &v in &values {
        grid.push(v.next_up());
        grid.push(v.next_down());
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn touches(a: &DatasetEdit, b: &DatasetEdit) -> bool {
    let point = |e: &DatasetEdit| match *e {
        DatasetEdit::Delete { point } | DatasetEdit::Flip { point, .. } => Some(point),
        DatasetEdit::Insert { .. } => None,
    };
    matches!((point(a), point(b)), (Some(p), Some(q)) if p == q)
}

/// Calls `f` on every edit combination of exactly `size` edits, in
/// lexicographic candidate order, until it returns `true`. Inserts may
/// repeat; no point is edited twice.
fn for_each_combination(
    candidates: &[DatasetEdit],
    size: usize,
    f: &mut dyn FnMut(&[DatasetEdit]) -> bool,
) -> bool {
    fn go(
        candidates: &[DatasetEdit],
        start: usize,
        size: usize,
        chosen: &mut Vec<DatasetEdit>,
        f: &mut dyn FnMut(&[DatasetEdit]) -> bool,
    ) -> bool {
        if chosen.len() == size {
            return f(chosen);
        }
        for idx in start..candidates.len() {
            let e = candidates[idx];
            if chosen.iter().any(|c| touches(c, &e)) {
                continue;
            }
            chosen.push(e);
            let next = if matches!(e, DatasetEdit::Insert { .. }) {
                idx
            } else {
                idx + 1
            };
            if go(candidates, next, size, chosen, f) {
                return true;
            }
            chosen.pop();
        }
        false
    }
    go(candidates, 0, size, &mut Vec::with_capacity(size), f)
}

/// Cheapest edits (first in enumeration order) that put one partition in
/// the wanted state, and that make it infeasible.
struct PartitionPlan {
    wanted: Option<Vec<DatasetEdit>>,
    infeasible: Option<Vec<DatasetEdit>>,
    evaluated: u64,
}

fn plan_partition(
    inst: &AttackInstance,
    sc: &Scenario,
    partition: usize,
    points: &[usize],
    test_score: f64,
    wanted: Outcome,
    max_edits: usize,
) -> PartitionPlan {
    let k = inst.num_classes();
    let mut candidates = Vec::new();
    let mut values = alloc::vec![test_score];
    for &j in points {
        candidates.push(DatasetEdit::Delete { point: j });
        values.extend_from_slice(&sc.calibration[j]);
    }
    for &j in points {
        for label in (0..k).filter(|&l| l != inst.labels[j]) {
            candidates.push(DatasetEdit::Flip { point: j, label });
        }
    }
    for score in insert_grid(values) {
        candidates.push(DatasetEdit::Insert { partition, score });
    }

    let mut plan = PartitionPlan {
        wanted: None,
        infeasible: None,
        evaluated: 0,
    };
    for size in 0..=max_edits {
        for_each_combination(&candidates, size, &mut |edits| {
            plan.evaluated += 1;
            let o = outcome(
                &partition_scores(inst, sc, points, edits),
                inst.alpha,
                test_score,
            );
            if o == wanted && plan.wanted.is_none() {
                plan.wanted = Some(edits.to_vec());
            }
            if o == Outcome::Infeasible && plan.infeasible.is_none() {
                plan.infeasible = Some(edits.to_vec());
            }
            plan.wanted.is_some() && plan.infeasible.is_some()
        });
        if plan.wanted.is_some() && plan.infeasible.is_some() {
            break;
        }
    }
    plan
}

/// Cheapest calibration edits achieving the objective for one scenario.
fn combine(
    inst: &AttackInstance,
    plans: &[PartitionPlan],
    objective: Objective,
    budget: usize,
) -> Option<Vec<DatasetEdit>> {
    if let Some(edits) = plans
        .iter()
        .filter_map(|p| p.infeasible.as_ref())
        .filter(|e| e.len() <= budget)
        .min_by_key(|e| e.len())
    {
        return Some(edits.clone());
    }
    let needed = match objective {
        Objective::RemoveClass => inst.partitions - inst.majority_threshold,
        Objective::AddClass => inst.majority_threshold + 1,
    };
    let already = plans
        .iter()
        .filter(|p| p.wanted.as_ref().is_some_and(Vec::is_empty))
        .count();
    let mut costs: Vec<(usize, usize)> = plans
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            p.wanted
                .as_ref()
                .filter(|e| !e.is_empty())
                .map(|e| (e.len(), i))
        })
        .collect();
    costs.sort_unstable();
    let missing = needed.saturating_sub(already);
    if costs.len() < missing {
        return None;
    }
    let chosen = &costs[..missing];
    if chosen.iter().map(|c| c.0).sum::<usize>() > budget {
        return None;
    }
    let mut partitions: Vec<usize> = chosen.iter().map(|c| c.1).collect();
    partitions.sort_unstable();
    Some(
        partitions
            .into_iter()
            .flat_map(|i| plans[i].wanted.clone().unwrap_or_default())
            .collect(),
    )
}

/// Subsets of `0..n` of size `m` in lexicographic order.
fn subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, m: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(n, m, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(n, m, 0, &mut Vec::with_capacity(m), &mut out);
    out
}

/// Searches for edits within `budget` that remove `class` from (or add it
/// to) the test point's majority set.
///
/// Exhaustive within [`EXHAUSTIVE_LIMITS`], seeded random sampling of
/// `max_trials` candidates beyond.
pub fn attack_search(
    inst: &AttackInstance,
    budget: &AttackBudget,
    objective: Objective,
    class: usize,
) -> Result<AttackReport> {
    let k = inst.num_classes();
    if class >= k {
        return Err(Error::ClassOutOfRange { class, classes: k });
    }
    let k_t = inst.num_classifiers();
    if budget.radius.training > k_t {
        return Err(Error::InvalidRadius {
            radius: budget.radius.training,
            classifiers: k_t,
        });
    }
    let clean = inst.clean_set();
    if achieved(objective, class, &Some(clean.clone())) {
        return Err(Error::InvalidInput(alloc::format!(
            "objective {objective:?} is already met for class {class} on the clean instance"
        )));
    }
    let corrupted_count = budget.radius.training.min(k_t);
    let mut report = AttackReport {
        instance_hash: alloc::format!("{:016x}", inst.hash()),
        budget: *budget,
        objective,
        class,
        found: false,
        mode: SearchMode::Exhaustive,
        trials: 0,
        corrupted_classifiers: Vec::new(),
        edits: Vec::new(),
        resulting_set: Some(clean),
    };
    if inst.is_exhaustive(budget) {
        exhaustive(inst, budget, objective, class, corrupted_count, &mut report);
    } else {
        report.mode = SearchMode::Randomized;
        if compositions_count(corrupted_count, k) > MAX_REASSIGNMENTS {
            return Err(Error::InstanceTooLarge(alloc::format!(
                "{corrupted_count} corrupted classifiers over {k} classes"
            )));
        }
        randomized(inst, budget, objective, class, corrupted_count, &mut report);
    }
    Ok(report)
}

fn compositions_count(m: usize, k: usize) -> usize {
    // C(m + k - 1, k - 1), saturating.
    let mut c: usize = 1;
    for i in 0..k.saturating_sub(1) {
        c = c.saturating_mul(m + i + 1) / (i + 1);
    }
    c
}

fn exhaustive(
    inst: &AttackInstance,
    budget: &AttackBudget,
    objective: Objective,
    class: usize,
    corrupted_count: usize,
    report: &mut AttackReport,
) {
    let wanted = match objective {
        Objective::RemoveClass => Outcome::Excluded,
        Objective::AddClass => Outcome::Included,
    };
    let members = inst.members();
    for corrupted in subsets(inst.num_classifiers(), corrupted_count) {
        let sc = Scenario::build(inst, &corrupted, objective, class);
        let test_score = sc.test_scores[class];
        let plans: Vec<PartitionPlan> = members
            .iter()
            .enumerate()
            .map(|(i, points)| {
                plan_partition(
                    inst,
                    &sc,
                    i,
                    points,
                    test_score,
                    wanted,
                    budget.radius.calibration,
                )
            })
            .collect();
        report.trials += plans.iter().map(|p| p.evaluated).sum::<u64>();
        if let Some(edits) = combine(inst, &plans, objective, budget.radius.calibration) {
            let result = run_pipeline(inst, &sc, &edits);
            assert!(
                achieved(objective, class, &result),
                "attack plan does not reproduce on the full pipeline"
            );
            report.found = true;
            report.corrupted_classifiers = corrupted;
            report.edits = edits;
            report.resulting_set = result;
            return;
        }
    }
}

fn randomized(
    inst: &AttackInstance,
    budget: &AttackBudget,
    objective: Objective,
    class: usize,
    corrupted_count: usize,
    report: &mut AttackReport,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let k = inst.num_classes();
    let k_t = inst.num_classifiers();
    let n = inst.len();
    let mut cached: Option<(Vec<usize>, Scenario, Vec<f64>)> = None;
    for trial in 0..budget.max_trials {
        // Partial Fisher-Yates for the corrupted classifiers.
        let mut pool: Vec<usize> = (0..k_t).collect();
        for i in 0..corrupted_count {
            let j = rng.random_range(i..k_t);
            pool.swap(i, j);
        }
        let mut corrupted = pool[..corrupted_count].to_vec();
        corrupted.sort_unstable();
        if cached.as_ref().is_none_or(|c| c.0 != corrupted) {
            let sc = Scenario::build(inst, &corrupted, objective, class);
            let mut values: Vec<f64> = sc.calibration.iter().flatten().copied().collect();
            values.push(sc.test_scores[class]);
            cached = Some((corrupted.clone(), sc, insert_grid(values)));
        }
        let (_, sc, grid) = cached.as_ref().expect("scenario cached above");

        let mut edits: Vec<DatasetEdit> = Vec::with_capacity(budget.radius.calibration);
        for _ in 0..budget.radius.calibration {
            let edit = match rng.random_range(0..3u8) {
                0 if n > 0 => DatasetEdit::Delete {
                    point: rng.random_range(0..n),
                },
                1 if n > 0 => {
                    let point = rng.random_range(0..n);
                    let shift = rng.random_range(1..k);
                    DatasetEdit::Flip {
                        point,
                        label: (inst.labels[point] + shift) % k,
                    }
                }
                _ => DatasetEdit::Insert {
                    partition: rng.random_range(0..inst.partitions),
                    score: grid[rng.random_range(0..grid.len())],
                },
            };
            if !edits.iter().any(|e| touches(e, &edit)) {
                edits.push(edit);
            }
        }
        let result = run_pipeline(inst, sc, &edits);
        if achieved(objective, class, &result) {
            report.found = true;
            report.trials = trial + 1;
            report.corrupted_classifiers = corrupted;
            report.edits = edits;
            report.resulting_set = result;
            return;
        }
    }
    report.trials = budget.max_trials;
}

/// Attacks found against claimed certificate flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Falsification {
    /// An attack removing a member of the clean set.
    pub coverage: Option<AttackReport>,
    /// An attack adding a non-member.
    pub size: Option<AttackReport>,
}

impl Falsification {
    pub fn is_empty(&self) -> bool {
        self.coverage.is_none() && self.size.is_none()
    }
}

/// Tries to break the coverage claim (every member stays) and/or the size
/// claim (no non-member enters) of the clean set.
pub fn falsify(
    inst: &AttackInstance,
    budget: &AttackBudget,
    check_coverage: bool,
    check_size: bool,
) -> Result<Falsification> {
    let clean = inst.clean_set();
    let mut out = Falsification::default();
    for class in 0..inst.num_classes() {
        let (objective, slot, wanted) = if clean.contains(class) {
            (Objective::RemoveClass, &mut out.coverage, check_coverage)
        } else {
            (Objective::AddClass, &mut out.size, check_size)
        };
        if !wanted || slot.is_some() {
            continue;
        }
        let report = attack_search(inst, budget, objective, class)?;
        if report.found {
            *slot = Some(report);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Three classifiers, two classes, one partition of nine points at the
    /// minimum feasible size for alpha = 0.1.
    fn tight_instance() -> AttackInstance {
        let rows: Vec<Vec<usize>> = (0..9)
            .map(|j| if j < 6 { vec![0, 0, 0] } else { vec![0, 0, 1] })
            .collect();
        let calibration = VoteMatrix::from_rows(2, &rows).unwrap();
        AttackInstance::new(calibration, vec![0; 9], vec![0; 9], 1, 0.1, vec![0, 0, 1]).unwrap()
    }

    #[test]
    fn zero_budget_finds_nothing() {
        let inst = tight_instance();
        let clean = inst.clean_set();
        assert!(clean.contains(0));
        let budget = AttackBudget::new(ThreatRadius::new(0, 0));
        let r = attack_search(&inst, &budget, Objective::RemoveClass, 0).unwrap();
        assert!(!r.found);
        assert_eq!(r.mode, SearchMode::Exhaustive);
        assert_eq!(r.resulting_set, Some(clean));
    }

    #[test]
    fn minimum_size_partition_falls_to_one_deletion() {
        let inst = tight_instance();
        let budget = AttackBudget::new(ThreatRadius::new(0, 1));
        let r = attack_search(&inst, &budget, Objective::RemoveClass, 0).unwrap();
        assert!(r.found);
        assert_eq!(r.edits.len(), 1);
        assert_eq!(r.resulting_set, None);
    }

    #[test]
    fn already_met_objective_is_rejected() {
        let inst = tight_instance();
        let budget = AttackBudget::new(ThreatRadius::new(1, 1));
        assert!(attack_search(&inst, &budget, Objective::AddClass, 0).is_err());
    }

    #[test]
    fn insert_grid_separates_values() {
        let g = insert_grid(vec![0.25, 0.5]);
        assert!(g.contains(&-1.0) && g.contains(&2.0));
        assert!(g.contains(&0.375));
        assert!(g.contains(&0.25f64.next_up()));
    }

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(subsets(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(subsets(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(compositions_count(2, 3), 6);
    }

    #[test]
    fn combinations_skip_repeated_points() {
        let c = [
            DatasetEdit::Delete { point: 0 },
            DatasetEdit::Flip { point: 0, label: 1 },
            DatasetEdit::Insert {
                partition: 0,
                score: 0.5,
            },
        ];
        let mut seen = Vec::new();
        for_each_combination(&c, 2, &mut |e| {
            seen.push(e.to_vec());
            false
        });
        // {delete, insert}, {flip, insert}, {insert, insert}
        assert_eq!(seen.len(), 3);
    }
}
