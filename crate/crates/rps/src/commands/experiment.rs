//! Synthetic experiments described by a TOML file.
//!
//! ```toml
//! seed = 7
//! alpha = 0.1
//! partitions = 4
//! max_rt = 2          # or: radii = [[0, 0], [1, 2]]
//! max_rc = 2
//!
//! [synthetic]
//! num_classes = 10
//! num_classifiers = 20
//! accuracy = 0.8      # or one value per class
//! calibration_size = 200
//! test_size = 500
//! ```

use std::path::Path;

use rps_core::eval::RadiusGrid;
use rps_core::synth::{generate_synthetic, SyntheticEnsembleSpec};
use rps_core::{calibrate, CalibrationConfig, HashMode, ScoreMode, ScoreSource, ThreatRadius};
use serde::{Deserialize, Serialize};

use super::{
    build_certifier, create_out, evaluate_and_write, PREDICTOR_FILE, RATIOS_FILE, REPORT_FILE,
};
use crate::bundle::PredictorBundle;
use crate::io::{Dataset, ScoreTable};
use crate::manifest::Manifest;
use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub alpha: f64,
    #[serde(default = "one")]
    pub partitions: usize,
    #[serde(default)]
    pub hash_mode: HashMode,
    #[serde(default)]
    pub max_rt: usize,
    #[serde(default)]
    pub max_rc: usize,
    /// Explicit `[r_t, r_c]` pairs; replaces the maxima.
    #[serde(default)]
    pub radii: Option<Vec<(usize, usize)>>,
    pub synthetic: SyntheticSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Accuracy {
    Uniform(f64),
    PerClass(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_classes: usize,
    pub num_classifiers: usize,
    pub accuracy: Accuracy,
    /// Uniform when absent.
    #[serde(default)]
    pub priors: Option<Vec<f64>>,
    pub calibration_size: usize,
    pub test_size: usize,
    #[serde(default = "default_dim")]
    pub feature_dim: usize,
}

fn one() -> usize {
    1
}

fn default_dim() -> usize {
    8
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn spec(&self) -> SyntheticEnsembleSpec {
        let s = &self.synthetic;
        let mut spec = SyntheticEnsembleSpec::uniform(
            s.num_classes,
            s.num_classifiers,
            0.0,
            s.calibration_size,
            s.test_size,
            self.seed,
        );
        spec.accuracy = match &s.accuracy {
            Accuracy::Uniform(a) => vec![*a; s.num_classes],
            Accuracy::PerClass(a) => a.clone(),
        };
        if let Some(p) = &s.priors {
            spec.priors = p.clone();
        }
        spec.feature_dim = s.feature_dim;
        spec
    }

    pub fn grid(&self) -> Result<RadiusGrid> {
        match &self.radii {
            None => Ok(RadiusGrid::from_max(self.max_rt, self.max_rc)),
            Some(pairs) => Ok(RadiusGrid::from_list(
                pairs
                    .iter()
                    .map(|&(t, c)| ThreatRadius::new(t, c))
                    .collect(),
            )?),
        }
    }
}

pub(super) fn run_experiment(config_path: &Path, out: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let grid = config.grid()?;
    let data = generate_synthetic(&config.spec())?;
    let cal = &data.calibration;
    let calibration_config =
        CalibrationConfig::new(config.alpha, config.partitions, ScoreMode::Smoothed)?
            .with_hash_mode(config.hash_mode);
    let predictor = calibrate(
        ScoreSource::Votes(&cal.votes),
        &cal.labels,
        &cal.features,
        calibration_config,
    )?;
    let as_dataset = |split: &rps_core::synth::SyntheticSplit| Dataset {
        ids: (0..split.labels.len() as u64).collect(),
        scores: ScoreTable::Votes(split.votes.clone()),
        features: split.features.clone(),
        labels: Some(split.labels.clone()),
    };
    let calibration = as_dataset(cal);
    let test = as_dataset(&data.test);
    let certifier = build_certifier(&predictor, Some(&calibration), &grid)?;

    create_out(out)?;
    PredictorBundle::from(&predictor).save(&out.join(PREDICTOR_FILE))?;
    evaluate_and_write(&certifier, &test, &grid, out)?;
    let value = serde_json::to_value(&config).map_err(|e| CliError::Config(e.to_string()))?;
    let mut manifest = Manifest::new("evaluate", value, Some(config.seed));
    manifest.add_input(config_path)?;
    for name in [PREDICTOR_FILE, REPORT_FILE, RATIOS_FILE] {
        manifest.add_output(out, name)?;
    }
    manifest.write(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_accuracy_forms() {
        let text = r#"
            seed = 3
            alpha = 0.1
            radii = [[0, 0], [1, 1]]
            [synthetic]
            num_classes = 3
            num_classifiers = 5
            accuracy = [0.9, 0.8, 0.7]
            calibration_size = 50
            test_size = 10
        "#;
        let c: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(c.partitions, 1);
        assert_eq!(c.spec().accuracy, vec![0.9, 0.8, 0.7]);
        assert_eq!(c.grid().unwrap().radii().len(), 2);
        let uniform = text.replace("[0.9, 0.8, 0.7]", "0.75");
        let c: ExperimentConfig = toml::from_str(&uniform).unwrap();
        assert_eq!(c.spec().accuracy, vec![0.75; 3]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "seed = 1\nalpha = 0.1\nbogus = 2\n[synthetic]\nnum_classes = 2\nnum_classifiers = 3\naccuracy = 0.9\ncalibration_size = 20\ntest_size = 5\n";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err());
    }
}
