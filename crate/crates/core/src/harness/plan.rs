use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auth::{CompareMode, DistanceKind};
use crate::checkpoint::PredictorKind;
use crate::diffusion::{GdmSpec, ScheduleConfig};
use crate::error::{PlaError, Result};
use crate::fingerprint::NormMode;
use crate::predictor::{RecurrentSpec, VaeSpec};
use crate::scenario::{ExternalMapping, ScenarioConfig};
use crate::train::TrainConfig;

/// Where a sweep gets its fingerprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    /// Simulated scenario. Seed `s` of the sweep uses `rng_seed + s`.
    Synthetic(ScenarioConfig),
    /// A channel container split contiguously by time into train/val/test.
    External {
        path: PathBuf,
        mapping: ExternalMapping,
        #[serde(default = "default_fractions")]
        fractions: [f64; 3],
    },
    /// A directory holding `train`, `val` and `test` bundle files as
    /// written by `pla gen-data`.
    Bundles { dir: PathBuf },
}

/// File names of the bundles in a [`DataSource::Bundles`] directory.
pub const BUNDLE_FILES: [&str; 3] = ["train.placsi", "val.placsi", "test.placsi"];

fn default_fractions() -> [f64; 3] {
    [0.6, 0.1, 0.3]
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(ScenarioConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    /// Train missing checkpoints; when false a missing one is an error.
    pub enabled: bool,
    /// Re-observe training conditions at the sweep's SNRs each epoch.
    pub condition_noise: bool,
    pub gdm: TrainConfig,
    pub vae: TrainConfig,
    pub recurrent: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            condition_noise: true,
            gdm: TrainConfig::default(),
            vae: TrainConfig {
                epochs: 10,
                ..TrainConfig::default()
            },
            recurrent: TrainConfig {
                epochs: 20,
                learning_rate: 2e-3,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencySettings {
    /// Time predict+authenticate per scheme during the sweep. Wall-clock
    /// numbers differ between runs, so this is off by default.
    pub enabled: bool,
    pub n_warmup: usize,
    pub n_trials: usize,
}

impl Default for LatencySettings {
    fn default() -> Self {
        Self {
            enabled: false,
            n_warmup: 2,
            n_trials: 10,
        }
    }
}

/// A full sweep: data, schemes, SNR grid, seeds, training and reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub data: DataSource,
    pub schemes: Vec<PredictorKind>,
    pub snr_db_list: Vec<f64>,
    pub ddim_steps: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub power_watts: Option<f64>,
    pub metric: DistanceKind,
    pub compare_mode: CompareMode,
    pub target_fa: f64,
    /// Cap on legitimate (and attack) trials per cell; all test samples when unset.
    pub max_trials: Option<usize>,
    pub roc_points: usize,
    pub norm_mode: NormMode,
    pub gdm: GdmSpec,
    pub schedule: ScheduleConfig,
    pub vae: VaeSpec,
    pub recurrent: RecurrentSpec,
    pub train: TrainSettings,
    pub latency: LatencySettings,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            schemes: PredictorKind::ALL.to_vec(),
            snr_db_list: vec![5.0, 10.0, 15.0, 20.0],
            ddim_steps: 20,
            seeds: vec![0],
            output_dir: PathBuf::from("runs/default"),
            power_watts: None,
            metric: DistanceKind::Nmse,
            compare_mode: CompareMode::Complex,
            target_fa: 0.01,
            max_trials: None,
            roc_points: 50,
            norm_mode: NormMode::PerSample,
            gdm: GdmSpec::default(),
            schedule: ScheduleConfig::default(),
            vae: VaeSpec::default(),
            recurrent: RecurrentSpec::default(),
            train: TrainSettings::default(),
            latency: LatencySettings::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let plan: Self = toml::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(PlaError::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PlaError::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(PlaError::config("schemes", "must list at least one scheme"));
        }
        if self.snr_db_list.is_empty() {
            return Err(PlaError::config("snr_db_list", "must list at least one SNR"));
        }
        if self.snr_db_list.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(PlaError::config("snr_db_list", "entries must be numbers or +inf"));
        }
        if self.seeds.is_empty() {
            return Err(PlaError::config("seeds", "must list at least one seed"));
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.schedule.t_train {
            return Err(PlaError::config(
                "ddim_steps",
                format!("{} not in 1..={}", self.ddim_steps, self.schedule.t_train),
            ));
        }
        if !(self.target_fa > 0.0 && self.target_fa < 1.0) {
            return Err(PlaError::config("target_fa", "must lie in (0, 1)"));
        }
        if let Some(p) = self.power_watts {
            if !(p > 0.0 && p.is_finite()) {
                return Err(PlaError::config("power_watts", "must be positive"));
            }
        }
        if self.max_trials == Some(0) {
            return Err(PlaError::config("max_trials", "must be positive"));
        }
        if self.latency.enabled && self.latency.n_trials < 3 {
            return Err(PlaError::config("latency.n_trials", "must be at least 3"));
        }
        if let DataSource::Synthetic(cfg) = &self.data {
            cfg.validate()?;
        }
        for t in [&self.train.gdm, &self.train.vae, &self.train.recurrent] {
            t.validate()?;
        }
        Ok(())
    }

    /// Schemes in canonical order without duplicates.
    pub fn canonical_schemes(&self) -> Vec<PredictorKind> {
        PredictorKind::ALL
            .into_iter()
            .filter(|k| self.schemes.contains(k))
            .collect()
    }

    /// SNRs sorted ascending without duplicates.
    pub fn canonical_snrs(&self) -> Vec<f64> {
        let mut s = self.snr_db_list.clone();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }

    pub fn canonical_seeds(&self) -> Vec<u64> {
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Hex SHA-256 of a value's JSON form.
pub fn json_hash<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string(value)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_round_trips_through_toml() {
        let plan = ExperimentPlan::default();
        let text = plan.to_toml().unwrap();
        assert_eq!(ExperimentPlan::from_toml_str(&text).unwrap(), plan);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let plan = ExperimentPlan::from_toml_str(
            r#"
            schemes = ["direct", "gdm"]
            snr_db_list = [20, 5]
            output_dir = "out"
            [data]
            source = "synthetic"
            rho_aj = 0.9
            [train.gdm]
            epochs = 3
            "#,
        )
        .unwrap();
        assert_eq!(plan.canonical_schemes(), vec![PredictorKind::Gdm, PredictorKind::Direct]);
        assert_eq!(plan.canonical_snrs(), vec![5.0, 20.0]);
        assert_eq!(plan.train.gdm.epochs, 3);
        match plan.data {
            DataSource::Synthetic(c) => assert_eq!(c.rho_aj, 0.9),
            _ => panic!("expected synthetic data"),
        }
    }

    #[test]
    fn invalid_plans_are_rejected() {
        assert!(ExperimentPlan::from_toml_str("schemes = []").is_err());
        assert!(ExperimentPlan::from_toml_str("snr_db_list = []").is_err());
        assert!(ExperimentPlan::from_toml_str("ddim_steps = 0").is_err());
        assert!(ExperimentPlan::from_toml_str("target_fa = 1.5").is_err());
        assert!(ExperimentPlan::from_toml_str("schemes = [\"transformer\"]").is_err());
        assert!(ExperimentPlan::from_toml_str("unknown_key = 1").is_err());
    }
}
