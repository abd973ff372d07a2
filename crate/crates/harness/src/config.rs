use std::path::{Path, PathBuf};

use hcope_core::coindice::SolverConfig;
use hcope_core::envs::EnvironmentSpec;
use hcope_core::features::FeatureMap;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::methods::Method;

/// Feature map used by the CoinDICE methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureChoice {
    #[default]
    Indicator,
    RandomFullRank { seed: u64 },
}

impl FeatureChoice {
    pub fn build(self, n_states: usize, n_actions: usize) -> Result<FeatureMap> {
        Ok(match self {
            FeatureChoice::Indicator => FeatureMap::indicator(n_states, n_actions),
            FeatureChoice::RandomFullRank { seed } => FeatureMap::random_full_rank(n_states, n_actions, seed)?,
        })
    }
}

fn default_horizon() -> usize {
    1
}

fn default_trials() -> usize {
    200
}

fn default_n_boot() -> usize {
    hcope_core::baselines::DEFAULT_N_BOOT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    /// Number of trajectories per dataset.
    pub dataset_sizes: Vec<usize>,
    /// Steps per trajectory.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Values of 1 - α.
    pub confidence_levels: Vec<f64>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub features: FeatureChoice,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Off by default so the CSV is reproducible byte for byte.
    #[serde(default)]
    pub record_runtime: bool,
    #[serde(default)]
    pub self_normalize: bool,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::File {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(HarnessError::config("n_trials", "must be at least 1"));
        }
        if self.dataset_sizes.is_empty() || self.dataset_sizes.contains(&0) {
            return Err(HarnessError::config("dataset_sizes", "need at least one positive size"));
        }
        if self.horizon == 0 {
            return Err(HarnessError::config("horizon", "must be at least 1"));
        }
        if self.confidence_levels.is_empty() {
            return Err(HarnessError::config("confidence_levels", "need at least one level"));
        }
        if let Some(l) = self.confidence_levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(HarnessError::config("confidence_levels", format!("{l} outside (0, 1)")));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::config("methods", "need at least one method"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(HarnessError::config("methods", "duplicate entries"));
        }
        if self.n_boot == 0 {
            return Err(HarnessError::config("n_boot", "must be positive"));
        }
        self.solver.validate()?;
        Ok(())
    }
}
