use std::fs;
use std::path::{Path, PathBuf};

use asd_core::dataset::BenchmarkConfig;
use asd_core::density::CovType;
use asd_core::evaluation::{PipelineConfig, SWEEP_K_VALUES};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k_values: Vec<usize>,
    pub cov_types: Vec<CovType>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_values: SWEEP_K_VALUES.to_vec(),
            cov_types: vec![CovType::Diagonal, CovType::Full],
        }
    }
}

/// Everything a run depends on. Missing fields take their defaults and the
/// fully resolved form is written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub pipeline: PipelineConfig,
    pub seeds: Vec<u64>,
    pub synth: BenchmarkConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            pipeline: PipelineConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            synth: BenchmarkConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn resolved(&self) -> Self {
        Self {
            pipeline: self.pipeline.resolved(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        if self.sweep.k_values.is_empty() || self.sweep.k_values.contains(&0) || self.sweep.cov_types.is_empty() {
            return Err(CliError::Config("sweep needs positive k_values and at least one cov_type".into()));
        }
        Ok(())
    }
}
