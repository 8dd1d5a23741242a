//! Subcommands of the `rps` binary.
//!
//! Every command writes its outputs and a `manifest.json` into `--out`.
//! Per-point work runs on a rayon pool of `--workers` threads; results are
//! collected in point order, so outputs do not depend on scheduling.

mod experiment;
mod oracle;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use rps_core::conformal::{calibration_partition_sizes, min_partition_size};
use rps_core::eval::{
    evaluate_point, reliability_ratios, summarize, Aucrc, RadiusGrid, ReliabilityRatios,
};
use rps_core::synth::{generate_synthetic, SyntheticEnsembleSpec, SyntheticSplit};
use rps_core::{
    calibrate, CalibrationConfig, Certificate, Certifier, FeatureVector, HashMode,
    MajorityPredictor, PredictionSet, ScoreMode, ScoreSource, ThreatRadius, VoteDistribution,
};
use serde::Serialize;

use crate::bundle::{load_predictor, write_json, PredictorBundle};
use crate::io::{write_features, write_labels, write_votes, DataPaths, Dataset};
use crate::manifest::Manifest;
use crate::{CliError, Result};

pub use experiment::ExperimentConfig;
pub use oracle::{AttackRecord, BoundViolation, OracleReport};

pub const PREDICTOR_FILE: &str = "predictor.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const CERTIFICATES_FILE: &str = "certificates.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const RATIOS_FILE: &str = "ratios.csv";
pub const ORACLE_REPORT_FILE: &str = "oracle_report.json";

#[derive(Debug, Parser)]
#[command(
    name = "rps",
    version,
    about = "Conformal prediction sets with poisoning certificates"
)]
pub struct Cli {
    /// Worker threads for per-point work (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit per-partition thresholds and the majority threshold.
    Calibrate(CalibrateArgs),
    /// Majority prediction sets for test points.
    Predict(PredictArgs),
    /// Reliability certificates over a radius grid.
    Certify(CertifyArgs),
    /// Check bounds and certificates against brute force and attack search.
    OracleCheck(OracleCheckArgs),
    /// Generate a synthetic ensemble dataset.
    Synth(SynthArgs),
    /// Coverage, set sizes and reliability ratios on labelled test data.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreModeArg {
    Smoothed,
    Hps,
    Aps,
}

impl From<ScoreModeArg> for ScoreMode {
    fn from(m: ScoreModeArg) -> Self {
        match m {
            ScoreModeArg::Smoothed => ScoreMode::Smoothed,
            ScoreModeArg::Hps => ScoreMode::Hps,
            ScoreModeArg::Aps => ScoreMode::Aps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HashModeArg {
    ByteHash,
    IntegerSum,
}

impl From<HashModeArg> for HashMode {
    fn from(m: HashModeArg) -> Self {
        match m {
            HashModeArg::ByteHash => HashMode::ByteHash,
            HashModeArg::IntegerSum => HashMode::IntegerSum,
        }
    }
}

/// Calibration files.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibrationInputs {
    /// Votes CSV (`point_id,clf_0,...`).
    #[arg(long, value_name = "CSV")]
    pub calib_votes: Option<PathBuf>,
    /// Class probabilities CSV (`point_id,p_0,...`).
    #[arg(long, value_name = "CSV", conflicts_with = "calib_votes")]
    pub calib_probabilities: Option<PathBuf>,
    /// Features CSV (`point_id,f_0,...`).
    #[arg(long, value_name = "CSV")]
    pub calib_features: Option<PathBuf>,
    /// Labels CSV (`point_id,label`).
    #[arg(long, value_name = "CSV")]
    pub calib_labels: Option<PathBuf>,
}

impl CalibrationInputs {
    fn given(&self) -> bool {
        self.calib_votes.is_some()
            || self.calib_probabilities.is_some()
            || self.calib_features.is_some()
            || self.calib_labels.is_some()
    }

    fn paths(&self) -> Result<DataPaths> {
        let missing = |flag: &str| CliError::Config(format!("--{flag} is required"));
        Ok(DataPaths {
            votes: self.calib_votes.clone(),
            probabilities: self.calib_probabilities.clone(),
            features: self
                .calib_features
                .clone()
                .ok_or_else(|| missing("calib-features"))?,
            labels: Some(
                self.calib_labels
                    .clone()
                    .ok_or_else(|| missing("calib-labels"))?,
            ),
        })
    }
}

/// Test files.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TestInputs {
    /// Votes CSV (`point_id,clf_0,...`).
    #[arg(long, value_name = "CSV")]
    pub votes: Option<PathBuf>,
    /// Class probabilities CSV (`point_id,p_0,...`).
    #[arg(long, value_name = "CSV", conflicts_with = "votes")]
    pub probabilities: Option<PathBuf>,
    /// Features CSV (`point_id,f_0,...`).
    #[arg(long, value_name = "CSV")]
    pub features: PathBuf,
    /// Labels CSV (`point_id,label`).
    #[arg(long, value_name = "CSV")]
    pub labels: Option<PathBuf>,
}

impl TestInputs {
    fn paths(&self) -> DataPaths {
        DataPaths {
            votes: self.votes.clone(),
            probabilities: self.probabilities.clone(),
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Largest training radius; every r_t in 0..=max is certified.
    #[arg(long, default_value_t = 0)]
    pub max_rt: usize,
    /// Largest calibration radius; every r_c in 0..=max is certified.
    #[arg(long, default_value_t = 0)]
    pub max_rc: usize,
    /// Explicit radius pairs `r_t:r_c`, comma separated; replaces the maxima.
    #[arg(long, value_name = "LIST", conflicts_with_all = ["max_rt", "max_rc"])]
    pub radii: Option<String>,
}

impl GridArgs {
    pub fn grid(&self) -> Result<RadiusGrid> {
        match &self.radii {
            None => Ok(RadiusGrid::from_max(self.max_rt, self.max_rc)),
            Some(list) => Ok(RadiusGrid::from_list(parse_radii(list)?)?),
        }
    }
}

pub fn parse_radii(list: &str) -> Result<Vec<ThreatRadius>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let bad =
                || CliError::Config(format!("radius pair `{pair}` is not of the form r_t:r_c"));
            let (t, c) = pair.trim().split_once(':').ok_or_else(bad)?;
            Ok(ThreatRadius::new(
                t.trim().parse().map_err(|_| bad())?,
                c.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub inputs: CalibrationInputs,
    /// Number of classes (required with votes).
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Miscoverage level.
    #[arg(long)]
    pub alpha: f64,
    /// Number of calibration partitions k_c.
    #[arg(long, default_value_t = 1)]
    pub partitions: usize,
    #[arg(long, value_enum, default_value_t = ScoreModeArg::Smoothed)]
    pub score_mode: ScoreModeArg,
    #[arg(long, value_enum, default_value_t = HashModeArg::ByteHash)]
    pub hash_mode: HashModeArg,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    /// Predictor written by `calibrate`.
    #[arg(long)]
    pub predictor: PathBuf,
    #[command(flatten)]
    pub test: TestInputs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CertifyArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    /// Calibration data the predictor was fit on; needed when r_t > 0.
    #[command(flatten)]
    pub calibration: CalibrationInputs,
    #[command(flatten)]
    pub test: TestInputs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// TOML experiment on synthetic data; replaces every other input.
    #[arg(long, value_name = "TOML", conflicts_with_all = ["predictor", "features"])]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    #[command(flatten)]
    pub calibration: CalibrationInputs,
    /// Test votes CSV.
    #[arg(long, value_name = "CSV")]
    pub votes: Option<PathBuf>,
    /// Test class probabilities CSV.
    #[arg(long, value_name = "CSV", conflicts_with = "votes")]
    pub probabilities: Option<PathBuf>,
    /// Test features CSV.
    #[arg(long, value_name = "CSV")]
    pub features: Option<PathBuf>,
    /// Test labels CSV.
    #[arg(long, value_name = "CSV")]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub num_classes: usize,
    /// Ensemble size k_t.
    #[arg(long)]
    pub num_classifiers: usize,
    /// Probability that a classifier votes for the true label.
    #[arg(long)]
    pub accuracy: f64,
    #[arg(long)]
    pub calibration_size: usize,
    #[arg(long)]
    pub test_size: usize,
    #[arg(long, default_value_t = 8)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleCheckArgs {
    /// Check this many seeded random small instances instead of files.
    #[arg(long, value_name = "N", conflicts_with = "features")]
    pub sweep: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Candidates per randomized attack search.
    #[arg(long, default_value_t = 10_000)]
    pub max_trials: u64,
    /// Allow instances beyond the exhaustive limits (randomized search;
    /// bound checks beyond the brute-force limits are skipped).
    #[arg(long)]
    pub randomized: bool,
    #[command(flatten)]
    pub calibration: CalibrationInputs,
    /// Test votes CSV.
    #[arg(long, value_name = "CSV")]
    pub votes: Option<PathBuf>,
    /// Test features CSV.
    #[arg(long, value_name = "CSV")]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub partitions: usize,
    #[arg(long, value_enum, default_value_t = HashModeArg::ByteHash)]
    pub hash_mode: HashModeArg,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Certify(a) => cmd_certify(&a),
        Command::OracleCheck(a) => oracle::cmd_oracle_check(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    })
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn to_config<T: Serialize>(args: &T) -> Result<serde_json::Value> {
    serde_json::to_value(args).map_err(|e| CliError::Config(e.to_string()))
}

fn add_inputs(manifest: &mut Manifest, paths: &DataPaths) -> Result<()> {
    let files = [
        &paths.votes,
        &paths.probabilities,
        &Some(paths.features.clone()),
        &paths.labels,
    ];
    for path in files.into_iter().flatten() {
        manifest.add_input(path)?;
    }
    Ok(())
}

fn warn_small_ensemble(data: &Dataset) {
    if let Some(v) = data.votes() {
        if v.num_classifiers() < 4 {
            eprintln!(
                "warning: only {} classifiers; training certificates are coarse for small ensembles",
                v.num_classifiers()
            );
        }
    }
}

/// Clean scores and, for votes, the vote distribution of one point.
fn point_scores(
    predictor: &MajorityPredictor,
    source: ScoreSource<'_>,
    point: usize,
    features: &FeatureVector,
) -> rps_core::Result<(Vec<f64>, Option<VoteDistribution>)> {
    let c = predictor.config();
    let scores = source.scores(c.score_mode, point, Some(features), c.hash_mode)?;
    let pi = match source {
        ScoreSource::Votes(v) => Some(v.distribution(point)),
        ScoreSource::Probabilities(_) => None,
    };
    Ok((scores, pi))
}

fn par_points<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> rps_core::Result<T> + Sync + Send,
{
    Ok((0..n)
        .into_par_iter()
        .map(f)
        .collect::<rps_core::Result<Vec<T>>>()?)
}

fn check_classes(predictor: &MajorityPredictor, data: &Dataset, what: &str) -> Result<()> {
    if data.num_classes() != predictor.num_classes() {
        return Err(CliError::Config(format!(
            "{what} has {} classes, the predictor {}",
            data.num_classes(),
            predictor.num_classes()
        )));
    }
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let paths = args.inputs.paths()?;
    let data = Dataset::load(&paths, args.num_classes)?;
    warn_small_ensemble(&data);
    let config = CalibrationConfig::new(args.alpha, args.partitions, args.score_mode.into())?
        .with_hash_mode(args.hash_mode.into());
    let sizes = calibration_partition_sizes(&data.features, &config)?;
    let required = min_partition_size(args.alpha);
    println!("partition sizes: {sizes:?}");
    let short: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] < required).collect();
    if !short.is_empty() {
        eprintln!(
            "each partition needs at least {required} points at alpha = {}",
            args.alpha
        );
        for i in short {
            eprintln!(
                "  partition {i}: {} points, {} short",
                sizes[i],
                required - sizes[i]
            );
        }
    }
    let predictor = calibrate(data.source(), data.labels()?, &data.features, config)?;
    println!("majority threshold: {}", predictor.majority_threshold());
    println!("feasibility margin: {}", predictor.feasibility_margin());

    create_out(&args.out)?;
    PredictorBundle::from(&predictor).save(&args.out.join(PREDICTOR_FILE))?;
    let mut manifest = Manifest::new("calibrate", to_config(args)?, None);
    add_inputs(&mut manifest, &paths)?;
    manifest.add_output(&args.out, PREDICTOR_FILE)?;
    manifest.write(&args.out)
}

fn write_predictions(path: &Path, ids: &[u64], sets: &[PredictionSet]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::parse(path, e))?;
    let fail = |e: csv::Error| CliError::parse(path, e);
    w.write_record(["point_id", "set_members", "set_size"])
        .map_err(fail)?;
    for (id, set) in ids.iter().zip(sets) {
        let members: Vec<String> = set.iter().map(|y| y.to_string()).collect();
        w.write_record([id.to_string(), members.join(";"), set.len().to_string()])
            .map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let predictor = load_predictor(&args.predictor)?;
    let paths = args.test.paths();
    let data = Dataset::load(&paths, Some(predictor.num_classes()))?;
    check_classes(&predictor, &data, "the test data")?;
    let sets = par_points(data.len(), |j| {
        let (scores, _) = point_scores(&predictor, data.source(), j, &data.features[j])?;
        predictor.predict_majority(&scores)
    })?;

    create_out(&args.out)?;
    write_predictions(&args.out.join(PREDICTIONS_FILE), &data.ids, &sets)?;
    let mut manifest = Manifest::new("predict", to_config(args)?, None);
    manifest.add_input(&args.predictor)?;
    add_inputs(&mut manifest, &paths)?;
    manifest.add_output(&args.out, PREDICTIONS_FILE)?;
    manifest.write(&args.out)
}

/// Certifier for `grid`, loading the calibration data when r_t > 0.
fn build_certifier<'a>(
    predictor: &'a MajorityPredictor,
    calibration: Option<&Dataset>,
    grid: &RadiusGrid,
) -> Result<Certifier<'a>> {
    let max_rt = grid.max_training();
    if max_rt == 0 {
        return Ok(Certifier::calibration_only(predictor));
    }
    let mode = predictor.config().score_mode;
    if mode != ScoreMode::Smoothed {
        return Err(rps_core::Error::UnsupportedMode(mode).into());
    }
    let calib = calibration.ok_or_else(|| {
        CliError::Config(
            "r_t > 0 needs the calibration votes, features and labels (--calib-*)".into(),
        )
    })?;
    let votes = calib
        .votes()
        .ok_or_else(|| CliError::Config("r_t > 0 needs calibration votes".into()))?;
    Ok(Certifier::with_training(
        predictor,
        votes,
        calib.labels()?,
        &calib.features,
        max_rt,
    )?)
}

fn load_calibration(
    inputs: &CalibrationInputs,
    predictor: &MajorityPredictor,
    grid: &RadiusGrid,
) -> Result<Option<(DataPaths, Dataset)>> {
    if grid.max_training() == 0 && !inputs.given() {
        return Ok(None);
    }
    let paths = inputs.paths()?;
    let data = Dataset::load(&paths, Some(predictor.num_classes()))?;
    check_classes(predictor, &data, "the calibration data")?;
    warn_small_ensemble(&data);
    Ok(Some((paths, data)))
}

#[derive(Debug, Serialize)]
struct CertifySummary {
    num_points: usize,
    reliability_ratios: Vec<ReliabilityRatios>,
    aucrc: Aucrc,
}

fn write_certificates(path: &Path, ids: &[u64], certs: &[Certificate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::parse(path, e))?;
    let fail = |e: csv::Error| CliError::parse(path, e);
    w.write_record([
        "point_id",
        "r_t",
        "r_c",
        "coverage_reliable",
        "size_reliable",
        "robust",
    ])
    .map_err(fail)?;
    for (id, cert) in ids.iter().zip(certs) {
        for v in &cert.verdicts {
            w.write_record([
                id.to_string(),
                v.radius.training.to_string(),
                v.radius.calibration.to_string(),
                v.coverage_reliable.to_string(),
                v.size_reliable.to_string(),
                v.robust.to_string(),
            ])
            .map_err(fail)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_ratios(path: &Path, ratios: &[ReliabilityRatios]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::parse(path, e))?;
    let fail = |e: csv::Error| CliError::parse(path, e);
    w.write_record(["r_t", "r_c", "coverage", "size", "robust"])
        .map_err(fail)?;
    for r in ratios {
        w.write_record([
            r.radius.training.to_string(),
            r.radius.calibration.to_string(),
            r.coverage.to_string(),
            r.size.to_string(),
            r.robust.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn cmd_certify(args: &CertifyArgs) -> Result<()> {
    let predictor = load_predictor(&args.predictor)?;
    let grid = args.grid.grid()?;
    if grid.max_training() > 0 && predictor.config().score_mode != ScoreMode::Smoothed {
        return Err(rps_core::Error::UnsupportedMode(predictor.config().score_mode).into());
    }
    let calibration = load_calibration(&args.calibration, &predictor, &grid)?;
    let certifier = build_certifier(&predictor, calibration.as_ref().map(|c| &c.1), &grid)?;
    let test_paths = args.test.paths();
    let test = Dataset::load(&test_paths, Some(predictor.num_classes()))?;
    check_classes(&predictor, &test, "the test data")?;

    let certs = par_points(test.len(), |j| {
        let (scores, pi) = point_scores(&predictor, test.source(), j, &test.features[j])?;
        certifier.certify_grid(&scores, pi.as_ref(), grid.radii())
    })?;
    let refs: Vec<&Certificate> = certs.iter().collect();
    let (ratios, aucrc) = reliability_ratios(&refs, &grid)?;

    create_out(&args.out)?;
    write_certificates(&args.out.join(CERTIFICATES_FILE), &test.ids, &certs)?;
    let summary = CertifySummary {
        num_points: test.len(),
        reliability_ratios: ratios,
        aucrc,
    };
    write_json(&args.out.join(SUMMARY_FILE), &summary)?;
    let mut manifest = Manifest::new("certify", to_config(args)?, None);
    manifest.add_input(&args.predictor)?;
    if let Some((paths, _)) = &calibration {
        add_inputs(&mut manifest, paths)?;
    }
    add_inputs(&mut manifest, &test_paths)?;
    manifest.add_output(&args.out, CERTIFICATES_FILE)?;
    manifest.add_output(&args.out, SUMMARY_FILE)?;
    manifest.write(&args.out)
}

fn write_split(out: &Path, prefix: &str, split: &SyntheticSplit) -> Result<Vec<String>> {
    let ids: Vec<u64> = (0..split.labels.len() as u64).collect();
    let names = [
        format!("{prefix}_votes.csv"),
        format!("{prefix}_labels.csv"),
        format!("{prefix}_features.csv"),
    ];
    write_votes(&out.join(&names[0]), &ids, &split.votes)?;
    write_labels(&out.join(&names[1]), &ids, &split.labels)?;
    write_features(&out.join(&names[2]), &ids, &split.features)?;
    Ok(names.to_vec())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = SyntheticEnsembleSpec::uniform(
        args.num_classes,
        args.num_classifiers,
        args.accuracy,
        args.calibration_size,
        args.test_size,
        args.seed,
    );
    spec.feature_dim = args.feature_dim;
    let data = generate_synthetic(&spec)?;

    create_out(&args.out)?;
    let mut names = write_split(&args.out, "calib", &data.calibration)?;
    names.extend(write_split(&args.out, "test", &data.test)?);
    let mut manifest = Manifest::new("synth", to_config(args)?, Some(args.seed));
    for name in &names {
        manifest.add_output(&args.out, name)?;
    }
    manifest.write(&args.out)
}

/// Evaluates `test` point by point and writes the report and ratio table.
fn evaluate_and_write(
    certifier: &Certifier<'_>,
    test: &Dataset,
    grid: &RadiusGrid,
    out: &Path,
) -> Result<()> {
    let labels = test.labels()?;
    let results = par_points(test.len(), |j| {
        evaluate_point(
            certifier,
            test.source(),
            j,
            labels[j],
            &test.features[j],
            grid,
        )
    })?;
    let report = summarize(&results, certifier.predictor().num_classes(), grid)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    write_ratios(&out.join(RATIOS_FILE), &report.reliability_ratios)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    if let Some(config) = &args.config {
        return experiment::run_experiment(config, &args.out);
    }
    let predictor_path = args
        .predictor
        .as_ref()
        .ok_or_else(|| CliError::Config("give --config or --predictor with test files".into()))?;
    let predictor = load_predictor(predictor_path)?;
    let grid = args.grid.grid()?;
    let calibration = load_calibration(&args.calibration, &predictor, &grid)?;
    let certifier = build_certifier(&predictor, calibration.as_ref().map(|c| &c.1), &grid)?;
    let test_paths = DataPaths {
        votes: args.votes.clone(),
        probabilities: args.probabilities.clone(),
        features: args
            .features
            .clone()
            .ok_or_else(|| CliError::Config("--features is required".into()))?,
        labels: Some(
            args.labels
                .clone()
                .ok_or_else(|| CliError::Config("--labels is required".into()))?,
        ),
    };
    let test = Dataset::load(&test_paths, Some(predictor.num_classes()))?;
    check_classes(&predictor, &test, "the test data")?;

    create_out(&args.out)?;
    evaluate_and_write(&certifier, &test, &grid, &args.out)?;
    let mut manifest = Manifest::new("evaluate", to_config(args)?, None);
    manifest.add_input(predictor_path)?;
    if let Some((paths, _)) = &calibration {
        add_inputs(&mut manifest, paths)?;
    }
    add_inputs(&mut manifest, &test_paths)?;
    manifest.add_output(&args.out, REPORT_FILE)?;
    manifest.add_output(&args.out, RATIOS_FILE)?;
    manifest.write(&args.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_lists() {
        let r = parse_radii("0:0, 2:1,1:3").unwrap();
        assert_eq!(
            r,
            vec![
                ThreatRadius::new(0, 0),
                ThreatRadius::new(2, 1),
                ThreatRadius::new(1, 3)
            ]
        );
        assert!(parse_radii("1-2").is_err());
        assert!(parse_radii("a:1").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
