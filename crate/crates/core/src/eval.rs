//! Empirical coverage, set-size statistics and certified reliability ratios.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::certify::{Certificate, Certifier, ThreatRadius};
use crate::conformal::PredictionSet;
use crate::error::{Error, Result};
use crate::partition::FeatureVector;
use crate::score::ScoreSource;

/// Radius pairs to certify at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RadiusGrid(Vec<ThreatRadius>);

impl RadiusGrid {
    /// Every pair up to the given maxima.
    pub fn from_max(max_training: usize, max_calibration: usize) -> Self {
        Self(ThreatRadius::grid(max_training, max_calibration))
    }

    pub fn from_list(mut radii: Vec<ThreatRadius>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::InvalidConfig("radius grid is empty".into()));
        }
        radii.sort_unstable();
        radii.dedup();
        Ok(Self(radii))
    }

    pub fn radii(&self) -> &[ThreatRadius] {
        &self.0
    }

    pub fn max_training(&self) -> usize {
        self.0.iter().map(|r| r.training).max().unwrap_or(0)
    }
}

/// Prediction set, true label and certificate of one test point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointResult {
    pub label: usize,
    pub set: PredictionSet,
    pub certificate: Certificate,
}

/// Fractions of points certified at one radius pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRatios {
    #[serde(flatten)]
    pub radius: ThreatRadius,
    pub coverage: f64,
    pub size: f64,
    pub robust: f64,
}

/// Mean certified ratio over the radius grid, per reliability type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aucrc {
    pub coverage: f64,
    pub size: f64,
    pub robust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_points: usize,
    pub empirical_coverage: f64,
    pub avg_set_size: f64,
    pub empty_ratio: f64,
    pub full_ratio: f64,
    pub singleton_ratio: f64,
    /// Coverage among singleton sets; absent without singletons.
    pub singleton_hit_ratio: Option<f64>,
    pub reliability_ratios: Vec<ReliabilityRatios>,
    pub aucrc: Aucrc,
}

impl EvalReport {
    pub fn ratios_at(&self, radius: ThreatRadius) -> Option<&ReliabilityRatios> {
        self.reliability_ratios.iter().find(|r| r.radius == radius)
    }
}

/// Predicts and certifies one test point.
pub fn evaluate_point(
    certifier: &Certifier<'_>,
    source: ScoreSource<'_>,
    point: usize,
    label: usize,
    features: &FeatureVector,
    grid: &RadiusGrid,
) -> Result<PointResult> {
    let predictor = certifier.predictor();
    let config = predictor.config();
    if label >= predictor.num_classes() {
        return Err(Error::ClassOutOfRange {
            class: label,
            classes: predictor.num_classes(),
        });
    }
    let scores = source.scores(config.score_mode, point, Some(features), config.hash_mode)?;
    let pi = match source {
        ScoreSource::Votes(v) => Some(v.distribution(point)),
        ScoreSource::Probabilities(_) => None,
    };
    Ok(PointResult {
        label,
        set: predictor.predict_majority(&scores)?,
        certificate: certifier.certify_grid(&scores, pi.as_ref(), grid.radii())?,
    })
}

/// Certified fractions per radius pair and their grid means.
pub fn reliability_ratios(
    certificates: &[&Certificate],
    grid: &RadiusGrid,
) -> Result<(Vec<ReliabilityRatios>, Aucrc)> {
    if certificates.is_empty() {
        return Err(Error::InvalidInput("no test points to evaluate".into()));
    }
    let n = certificates.len() as f64;
    let mut ratios = Vec::with_capacity(grid.radii().len());
    for &radius in grid.radii() {
        let (mut coverage, mut size, mut robust) = (0usize, 0usize, 0usize);
        for c in certificates {
            let v = c.at(radius).ok_or_else(|| {
                Error::InvalidInput(alloc::format!(
                    "certificate lacks radius (r_t = {}, r_c = {})",
                    radius.training,
                    radius.calibration
                ))
            })?;
            coverage += usize::from(v.coverage_reliable);
            size += usize::from(v.size_reliable);
            robust += usize::from(v.robust);
        }
        ratios.push(ReliabilityRatios {
            radius,
            coverage: coverage as f64 / n,
            size: size as f64 / n,
            robust: robust as f64 / n,
        });
    }
    let cells = ratios.len() as f64;
    let mean = |f: fn(&ReliabilityRatios) -> f64| ratios.iter().map(f).sum::<f64>() / cells;
    let aucrc = Aucrc {
        coverage: mean(|r| r.coverage),
        size: mean(|r| r.size),
        robust: mean(|r| r.robust),
    };
    Ok((ratios, aucrc))
}

/// Folds per-point results, in order, into a report.
pub fn summarize(
    results: &[PointResult],
    num_classes: usize,
    grid: &RadiusGrid,
) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no test points to evaluate".into()));
    }
    let n = results.len() as f64;
    let frac = |count: usize| count as f64 / n;
    let covered = results.iter().filter(|r| r.set.contains(r.label)).count();
    let total_size: usize = results.iter().map(|r| r.set.len()).sum();
    let empty = results.iter().filter(|r| r.set.is_empty()).count();
    let full = results
        .iter()
        .filter(|r| r.set.is_full(num_classes))
        .count();
    let singletons: Vec<&PointResult> = results.iter().filter(|r| r.set.len() == 1).collect();
    let singleton_hit_ratio = (!singletons.is_empty()).then(|| {
        singletons
            .iter()
            .filter(|r| r.set.contains(r.label))
            .count() as f64
            / singletons.len() as f64
    });

    let certificates: Vec<&Certificate> = results.iter().map(|r| &r.certificate).collect();
    let (reliability_ratios, aucrc) = reliability_ratios(&certificates, grid)?;

    Ok(EvalReport {
        num_points: results.len(),
        empirical_coverage: frac(covered),
        avg_set_size: total_size as f64 / n,
        empty_ratio: frac(empty),
        full_ratio: frac(full),
        singleton_ratio: frac(singletons.len()),
        singleton_hit_ratio,
        reliability_ratios,
        aucrc,
    })
}

/// Predicts and certifies every test point and summarizes.
pub fn evaluate(
    certifier: &Certifier<'_>,
    source: ScoreSource<'_>,
    labels: &[usize],
    features: &[FeatureVector],
    grid: &RadiusGrid,
) -> Result<EvalReport> {
    if source.len() != labels.len() || labels.len() != features.len() {
        return Err(Error::InvalidInput(
            "test scores, labels and features differ in length".into(),
        ));
    }
    let results = labels
        .iter()
        .zip(features)
        .enumerate()
        .map(|(j, (&y, x))| evaluate_point(certifier, source, j, y, x, grid))
        .collect::<Result<Vec<_>>>()?;
    summarize(&results, certifier.predictor().num_classes(), grid)
}
