//! `oracle-check`: greedy score bounds against brute force, and every
//! certificate flag against attack search.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rps_core::certify::{lower_bound_score, upper_bound_score};
use rps_core::conformal::{min_partition_size, ScoredCalibrationSet};
use rps_core::eval::RadiusGrid;
use rps_core::oracle::{
    brute_force_score_bounds, falsify, AttackBudget, AttackInstance, AttackReport,
    BRUTE_FORCE_LIMITS, EXHAUSTIVE_LIMITS,
};
use rps_core::partition::partition_indices;
use rps_core::{
    CalibrationConfig, Certifier, MajorityPredictor, ScoreMode, VoteDistribution, VoteMatrix,
};
use serde::Serialize;

use super::{create_out, to_config, OracleCheckArgs, ORACLE_REPORT_FILE};
use crate::bundle::write_json;
use crate::io::{DataPaths, Dataset};
use crate::manifest::Manifest;
use crate::{CliError, Result};

/// A smoothed-score calibration set with fixed partitions and test points.
#[derive(Debug, Clone)]
pub struct CheckInstance {
    pub calibration: VoteMatrix,
    pub labels: Vec<usize>,
    pub assignments: Vec<usize>,
    pub partitions: usize,
    pub alpha: f64,
    pub tests: Vec<(u64, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    pub instance: usize,
    pub point_id: u64,
    pub class: usize,
    pub r_t: usize,
    pub greedy: (f64, f64),
    pub brute_force: (f64, f64),
}

/// An attack that changed the clean set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackRecord {
    pub instance: usize,
    pub point_id: u64,
    pub r_t: usize,
    pub r_c: usize,
    /// `coverage` or `size`.
    pub flag: String,
    /// Whether the certificate claimed the flag; a found attack on a
    /// certified flag is a soundness violation.
    pub certified: bool,
    pub attack: AttackReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OracleReport {
    pub mode: String,
    pub seed: u64,
    pub instances: usize,
    pub test_points: usize,
    pub bound_checks: u64,
    pub bound_checks_skipped: bool,
    pub bound_violations: Vec<BoundViolation>,
    pub flag_checks: u64,
    pub certified_flags: u64,
    /// Instances where the certifier's clean set differs from the oracle's.
    pub clean_set_mismatches: usize,
    pub soundness_violations: usize,
    pub attacks: Vec<AttackRecord>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.bound_violations.is_empty()
            && self.soundness_violations == 0
            && self.clean_set_mismatches == 0
    }

    fn absorb(&mut self, other: OracleReport) {
        self.test_points += other.test_points;
        self.bound_checks += other.bound_checks;
        self.bound_violations.extend(other.bound_violations);
        self.flag_checks += other.flag_checks;
        self.certified_flags += other.certified_flags;
        self.clean_set_mismatches += other.clean_set_mismatches;
        self.soundness_violations += other.soundness_violations;
        self.attacks.extend(other.attacks);
    }
}

fn smoothed_predictor(inst: &CheckInstance) -> rps_core::Result<MajorityPredictor> {
    let k = inst.calibration.num_classes();
    let scores = inst
        .labels
        .iter()
        .enumerate()
        .map(|(j, &y)| inst.calibration.distribution(j).score(y))
        .collect::<rps_core::Result<Vec<f64>>>()?;
    let scored =
        ScoredCalibrationSet::from_assignments(&scores, &inst.assignments, inst.partitions)?;
    let config = CalibrationConfig::new(inst.alpha, inst.partitions, ScoreMode::Smoothed)?;
    MajorityPredictor::from_scored(&scored, config, k)
}

fn check_bounds(
    index: usize,
    point_id: u64,
    pi: &VoteDistribution,
    report: &mut OracleReport,
) -> rps_core::Result<()> {
    for r in 0..=pi.num_classifiers() {
        for y in 0..pi.num_classes() {
            let greedy = (lower_bound_score(pi, y, r)?, upper_bound_score(pi, y, r)?);
            let brute = brute_force_score_bounds(pi, y, r)?;
            report.bound_checks += 1;
            if greedy.0.to_bits() != brute.0.to_bits() || greedy.1.to_bits() != brute.1.to_bits() {
                report.bound_violations.push(BoundViolation {
                    instance: index,
                    point_id,
                    class: y,
                    r_t: r,
                    greedy,
                    brute_force: brute,
                });
            }
        }
    }
    Ok(())
}

/// Checks one instance on every radius in `grid`.
pub fn check_instance(
    index: usize,
    inst: &CheckInstance,
    grid: &RadiusGrid,
    seed: u64,
    max_trials: u64,
    bound_checks: bool,
) -> rps_core::Result<OracleReport> {
    let predictor = smoothed_predictor(inst)?;
    let certifier = Certifier::with_training_assignments(
        &predictor,
        &inst.calibration,
        &inst.labels,
        &inst.assignments,
        grid.max_training(),
    )?;
    let k = inst.calibration.num_classes();
    let per_point = inst
        .tests
        .par_iter()
        .map(|(point_id, votes)| {
            let mut report = OracleReport {
                test_points: 1,
                ..OracleReport::default()
            };
            let pi = VoteDistribution::from_votes(votes, k)?;
            if bound_checks {
                check_bounds(index, *point_id, &pi, &mut report)?;
            }
            let attack_instance = AttackInstance::new(
                inst.calibration.clone(),
                inst.labels.clone(),
                inst.assignments.clone(),
                inst.partitions,
                inst.alpha,
                votes.clone(),
            )?;
            let scores = pi.scores();
            if attack_instance.clean_set() != predictor.predict_majority(&scores)? {
                report.clean_set_mismatches += 1;
            }
            for &radius in grid.radii() {
                let verdict = certifier.certify(&scores, Some(&pi), radius)?;
                let budget = AttackBudget::new(radius)
                    .with_seed(seed)
                    .with_max_trials(max_trials);
                let found = falsify(&attack_instance, &budget, true, true)?;
                report.flag_checks += 2;
                report.certified_flags +=
                    u64::from(verdict.coverage_reliable) + u64::from(verdict.size_reliable);
                let claims = [
                    ("coverage", verdict.coverage_reliable, found.coverage),
                    ("size", verdict.size_reliable, found.size),
                ];
                for (flag, certified, attack) in claims {
                    if let Some(attack) = attack {
                        report.soundness_violations += usize::from(certified);
                        report.attacks.push(AttackRecord {
                            instance: index,
                            point_id: *point_id,
                            r_t: radius.training,
                            r_c: radius.calibration,
                            flag: flag.to_string(),
                            certified,
                            attack,
                        });
                    }
                }
            }
            Ok(report)
        })
        .collect::<rps_core::Result<Vec<_>>>()?;
    let mut report = OracleReport::default();
    for r in per_point {
        report.absorb(r);
    }
    Ok(report)
}

/// A random small feasible instance: 3 or 4 classifiers, 2 or 3 classes,
/// 1 to 3 partitions, 12 to 18 calibration points and one test point.
/// Classifiers vote for the true label with probability 0.7.
pub fn random_instance(rng: &mut ChaCha8Rng) -> CheckInstance {
    const ALPHAS: [f64; 3] = [0.2, 0.25, 1.0 / 3.0];
    let k_t = rng.random_range(3..=4);
    let k = rng.random_range(2..=3);
    let partitions = rng.random_range(1..=3);
    let n = rng.random_range(12..=18);
    let alpha = ALPHAS[rng.random_range(0..ALPHAS.len())];
    let vote = |rng: &mut ChaCha8Rng, y: usize| -> Vec<usize> {
        (0..k_t)
            .map(|_| {
                if rng.random_bool(0.7) {
                    y
                } else {
                    rng.random_range(0..k)
                }
            })
            .collect()
    };
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let rows: Vec<Vec<usize>> = labels.iter().map(|&y| vote(rng, y)).collect();
    let required = min_partition_size(alpha);
    let assignments = loop {
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..partitions)).collect();
        if (0..partitions).all(|p| a.iter().filter(|&&q| q == p).count() >= required) {
            break a;
        }
    };
    let test_label = rng.random_range(0..k);
    let test = vote(rng, test_label);
    CheckInstance {
        calibration: VoteMatrix::from_rows(k, &rows).expect("votes are in range"),
        labels,
        assignments,
        partitions,
        alpha,
        tests: vec![(0, test)],
    }
}

fn guard(inst: &CheckInstance, grid: &RadiusGrid, randomized: bool) -> Result<bool> {
    let l = EXHAUSTIVE_LIMITS;
    let max_rc = grid
        .radii()
        .iter()
        .map(|r| r.calibration)
        .max()
        .unwrap_or(0);
    let exhaustive = inst.calibration.len() <= l.calibration_points
        && inst.calibration.num_classifiers() <= l.classifiers
        && inst.calibration.num_classes() <= l.classes
        && max_rc <= l.calibration_radius;
    if !exhaustive && !randomized {
        return Err(rps_core::Error::InstanceTooLarge(format!(
            "exhaustive attack search needs n <= {}, k_t <= {}, K <= {} and r_c <= {}; \
             got n = {}, k_t = {}, K = {}, r_c = {max_rc} (pass --randomized to sample instead)",
            l.calibration_points,
            l.classifiers,
            l.classes,
            l.calibration_radius,
            inst.calibration.len(),
            inst.calibration.num_classifiers(),
            inst.calibration.num_classes(),
        ))
        .into());
    }
    Ok(inst.calibration.num_classifiers() <= BRUTE_FORCE_LIMITS.0
        && inst.calibration.num_classes() <= BRUTE_FORCE_LIMITS.1)
}

fn load_instance(args: &OracleCheckArgs) -> Result<(CheckInstance, Vec<PathBuf>)> {
    let need = |flag: &str| CliError::Config(format!("--{flag} is required without --sweep"));
    let alpha = args.alpha.ok_or_else(|| need("alpha"))?;
    let calib_paths = args.calibration.paths()?;
    let calib = Dataset::load(&calib_paths, args.num_classes)?;
    let calibration = calib
        .votes()
        .ok_or_else(|| CliError::Config("oracle checks need calibration votes".into()))?
        .clone();
    let test_paths = DataPaths {
        votes: Some(args.votes.clone().ok_or_else(|| need("votes"))?),
        probabilities: None,
        features: args.features.clone().ok_or_else(|| need("features"))?,
        labels: None,
    };
    let test = Dataset::load(&test_paths, Some(calibration.num_classes()))?;
    let test_votes = test.votes().expect("loaded from a votes file");
    let assignments = partition_indices(&calib.features, args.partitions, args.hash_mode.into())?;
    let inst = CheckInstance {
        labels: calib.labels()?.to_vec(),
        assignments,
        partitions: args.partitions,
        alpha,
        tests: test
            .ids
            .iter()
            .enumerate()
            .map(|(j, &id)| (id, test_votes.row(j).to_vec()))
            .collect(),
        calibration,
    };
    let mut inputs: Vec<PathBuf> = [
        calib_paths.votes,
        Some(calib_paths.features),
        calib_paths.labels,
    ]
    .into_iter()
    .flatten()
    .collect();
    inputs.extend(test_paths.votes);
    inputs.push(test_paths.features);
    Ok((inst, inputs))
}

pub(super) fn cmd_oracle_check(args: &OracleCheckArgs) -> Result<()> {
    let grid = args.grid.grid()?;
    let mut inputs = Vec::new();
    let (instances, mode) = match args.sweep {
        Some(count) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (
                (0..count)
                    .map(|_| random_instance(&mut rng))
                    .collect::<Vec<_>>(),
                "sweep",
            )
        }
        None => {
            let (inst, paths) = load_instance(args)?;
            inputs = paths;
            (vec![inst], "files")
        }
    };
    let mut report = OracleReport {
        mode: mode.to_string(),
        seed: args.seed,
        instances: instances.len(),
        ..OracleReport::default()
    };
    for (index, inst) in instances.iter().enumerate() {
        let bound_checks = guard(inst, &grid, args.randomized)?;
        report.bound_checks_skipped |= !bound_checks;
        let max_rt = grid.max_training();
        if max_rt > inst.calibration.num_classifiers() {
            return Err(rps_core::Error::InvalidRadius {
                radius: max_rt,
                classifiers: inst.calibration.num_classifiers(),
            }
            .into());
        }
        report.absorb(check_instance(
            index,
            inst,
            &grid,
            args.seed,
            args.max_trials,
            bound_checks,
        )?);
    }

    create_out(&args.out)?;
    write_json(&args.out.join(ORACLE_REPORT_FILE), &report)?;
    let mut manifest = Manifest::new("oracle-check", to_config(args)?, Some(args.seed));
    for path in &inputs {
        manifest.add_input(path)?;
    }
    manifest.add_output(&args.out, ORACLE_REPORT_FILE)?;
    manifest.write(&args.out)?;

    println!(
        "{} instances, {} bound checks, {} flag checks ({} certified), {} attacks found",
        report.instances,
        report.bound_checks,
        report.flag_checks,
        report.certified_flags,
        report.attacks.len()
    );
    if report.passed() {
        return Ok(());
    }
    Err(CliError::Soundness(format!(
        "{} bound mismatches, {} falsified certificates, {} clean-set mismatches (see {})",
        report.bound_violations.len(),
        report.soundness_violations,
        report.clean_set_mismatches,
        args.out.join(ORACLE_REPORT_FILE).display()
    )))
}
