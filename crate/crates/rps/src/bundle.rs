//! Calibrated predictor as JSON.

use std::path::Path;

use rps_core::binomial::binomial_majority_threshold;
use rps_core::score::APS_GENERATOR;
use rps_core::{CalibrationConfig, HashMode, MajorityPredictor, ScoreMode, FORMAT_VERSION};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorBundle {
    pub format_version: u32,
    pub score_mode: ScoreMode,
    pub alpha: f64,
    pub partitions: usize,
    pub hash_mode: HashMode,
    pub num_classes: usize,
    pub thresholds: Vec<f64>,
    pub majority_threshold: usize,
    pub partition_sizes: Vec<usize>,
    /// Generator behind the APS tie breaker; checked on load so that APS
    /// scores are reproduced exactly.
    pub aps_generator: String,
}

impl From<&MajorityPredictor> for PredictorBundle {
    fn from(p: &MajorityPredictor) -> Self {
        let c = p.config();
        Self {
            format_version: FORMAT_VERSION,
            score_mode: c.score_mode,
            alpha: c.alpha,
            partitions: c.partitions,
            hash_mode: c.hash_mode,
            num_classes: p.num_classes(),
            thresholds: p.thresholds().to_vec(),
            majority_threshold: p.majority_threshold(),
            partition_sizes: p.partition_sizes().to_vec(),
            aps_generator: APS_GENERATOR.to_string(),
        }
    }
}

impl PredictorBundle {
    pub fn into_predictor(self) -> Result<MajorityPredictor> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "predictor format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.aps_generator != APS_GENERATOR {
            return Err(CliError::Config(format!(
                "predictor was written with APS generator `{}`, this build uses `{APS_GENERATOR}`",
                self.aps_generator
            )));
        }
        let config = CalibrationConfig::new(self.alpha, self.partitions, self.score_mode)?
            .with_hash_mode(self.hash_mode);
        let expected = binomial_majority_threshold(self.alpha, self.partitions)?;
        if self.majority_threshold != expected {
            return Err(CliError::Config(format!(
                "majority threshold {} does not match the calibrated value {expected}",
                self.majority_threshold
            )));
        }
        Ok(MajorityPredictor::from_parts(
            config,
            self.thresholds,
            self.majority_threshold,
            self.num_classes,
            self.partition_sizes,
        )?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::parse(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load_predictor(path: &Path) -> Result<MajorityPredictor> {
    PredictorBundle::load(path)?.into_predictor()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let config = CalibrationConfig::new(0.1, 2, ScoreMode::Smoothed).unwrap();
        let t = binomial_majority_threshold(0.1, 2).unwrap();
        let p =
            MajorityPredictor::from_parts(config, vec![0.1 + 0.2, 1.0 / 3.0], t, 3, vec![9, 11])
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        PredictorBundle::from(&p).save(&path).unwrap();
        assert_eq!(load_predictor(&path).unwrap(), p);
    }

    #[test]
    fn arbitrary_thresholds_survive_json() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let thresholds: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let text = serde_json::to_string(&thresholds).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert!(thresholds
            .iter()
            .zip(&back)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn tampered_threshold_is_rejected() {
        let config = CalibrationConfig::new(0.1, 2, ScoreMode::Smoothed).unwrap();
        let p = MajorityPredictor::from_parts(config, vec![0.3, 0.4], 0, 3, vec![9, 11]).unwrap();
        let mut b = PredictorBundle::from(&p);
        b.majority_threshold = 1;
        assert!(matches!(b.into_predictor(), Err(CliError::Config(_))));
    }
}
