//! Multi-seed experiments over every machine/SNR combination of a dataset,
//! and the mixture-size sweep.

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::auc::{roc_auc, ScoredRecording};
use super::pipeline::{Detector, Featurizer, ModelTag, PipelineConfig};
use super::split::make_split;
use crate::dataset::{DatasetManifest, MachineType, RecordingMeta};
use crate::density::{CovType, DensityConfig};
use crate::error::{ensure, AsdError, Result};
use crate::featurize::FeatureSequence;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, mix_seed};

/// Mixture sizes of the default sweep grid.
pub const SWEEP_K_VALUES: [usize; 8] = [1, 4, 8, 12, 16, 20, 24, 28];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Combination {
    pub machine_type: MachineType,
    pub machine_id: u32,
    pub snr_db: Option<i32>,
}

impl Combination {
    fn labels(&self) -> [String; 3] {
        [
            self.machine_type.to_string(),
            self.machine_id.to_string(),
            self.snr_db.map_or_else(|| "none".to_string(), |s| s.to_string()),
        ]
    }
}

/// The recordings of one combination with their base features.
#[derive(Debug, Clone)]
pub struct LabelledSet<T> {
    pub combination: Combination,
    pub recordings: Vec<RecordingMeta>,
    pub features: Vec<FeatureSequence<T>>,
}

/// Extracts features for every combination. A combination whose features
/// cannot be computed is returned as an error string.
pub fn featurize_dataset<T: Scalar>(
    config: &PipelineConfig,
    manifest: &DatasetManifest,
) -> Result<Vec<(Combination, std::result::Result<LabelledSet<T>, String>)>> {
    let featurizer = Featurizer::<T>::new(config)?;
    Ok(manifest
        .combinations()
        .into_iter()
        .map(|(machine_type, machine_id, snr_db)| {
            let combination = Combination {
                machine_type,
                machine_id,
                snr_db,
            };
            let recordings: Vec<RecordingMeta> =
                manifest.select(machine_type, machine_id, snr_db).into_iter().cloned().collect();
            let features = recordings
                .par_iter()
                .map(|r| featurizer.recording(manifest, r))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.to_string());
            (
                combination,
                features.map(|features| LabelledSet {
                    combination,
                    recordings,
                    features,
                }),
            )
        })
        .collect())
}

/// Seed of one experiment cell, independent of which other cells exist.
pub fn cell_seed(master: u64, combination: &Combination, model: ModelTag) -> u64 {
    let [m, id, snr] = combination.labels();
    derive_seed(master, &[&m, &id, &snr, model.as_str()])
}

/// Split, fit on the normal training recordings, score the balanced test set.
pub fn evaluate_cell<T: Scalar>(config: &PipelineConfig, set: &LabelledSet<T>, seed: u64) -> Result<f64> {
    let split = make_split(&set.recordings, mix_seed(seed, "split"))?;
    let train: Vec<FeatureSequence<T>> = split.train.iter().map(|&i| set.features[i].clone()).collect();
    let detector = Detector::fit(config, &train, mix_seed(seed, "fit"))?;
    let scored = split
        .test
        .iter()
        .map(|&i| {
            Ok(ScoredRecording {
                recording_id: set.recordings[i].recording_id.clone(),
                label: set.recordings[i].label,
                score: detector.score(&set.features[i])?.as_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    roc_auc(&scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub machine_type: MachineType,
    pub machine_id: u32,
    pub snr_db: Option<i32>,
    pub model: ModelTag,
    pub seed: u64,
    pub auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub machine_type: MachineType,
    pub machine_id: u32,
    pub snr_db: Option<i32>,
    pub model: ModelTag,
    pub n_seeds: usize,
    pub n_failed: usize,
    pub complete: bool,
    pub mean_auc: Option<f64>,
    /// Population standard deviation over the successful seeds.
    pub std_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelTag,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
    pub groups: Vec<GroupSummary>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl EvalReport {
    fn from_cells(model: ModelTag, seeds: &[u64], cells: Vec<CellResult>) -> Self {
        let mut groups: BTreeMap<Combination, Vec<&CellResult>> = BTreeMap::new();
        for c in &cells {
            let key = Combination {
                machine_type: c.machine_type,
                machine_id: c.machine_id,
                snr_db: c.snr_db,
            };
            groups.entry(key).or_default().push(c);
        }
        let groups = groups
            .into_iter()
            .map(|(k, cs)| {
                let aucs: Vec<f64> = cs.iter().filter_map(|c| c.auc).collect();
                let stats = mean_std(&aucs);
                GroupSummary {
                    machine_type: k.machine_type,
                    machine_id: k.machine_id,
                    snr_db: k.snr_db,
                    model,
                    n_seeds: cs.len(),
                    n_failed: cs.len() - aucs.len(),
                    complete: aucs.len() == cs.len(),
                    mean_auc: stats.map(|s| s.0),
                    std_auc: stats.map(|s| s.1),
                }
            })
            .collect();
        EvalReport {
            model,
            seeds: seeds.to_vec(),
            cells,
            groups,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|c| c.auc.is_some())
    }

    /// One row per cell: `machine_type,machine_id,snr_db,model,seed,auc`.
    /// Failed cells have an empty AUC.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["machine_type", "machine_id", "snr_db", "model", "seed", "auc"])?;
        for c in &self.cells {
            w.write_record([
                c.machine_type.to_string(),
                c.machine_id.to_string(),
                c.snr_db.map(|s| s.to_string()).unwrap_or_default(),
                c.model.to_string(),
                c.seed.to_string(),
                c.auc.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        csv_string(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| AsdError::invalid(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| AsdError::invalid(format!("csv encoding: {e}")))
}

fn run_cells<T: Scalar>(
    config: &PipelineConfig,
    sets: &[(Combination, std::result::Result<LabelledSet<T>, String>)],
    seeds: &[u64],
) -> Vec<CellResult> {
    let jobs: Vec<(usize, u64)> = (0..sets.len()).flat_map(|s| seeds.iter().map(move |&seed| (s, seed))).collect();
    jobs.par_iter()
        .map(|&(s, seed)| {
            let (combination, set) = &sets[s];
            let outcome = match set {
                Ok(set) => evaluate_cell(config, set, cell_seed(seed, combination, config.model)).map_err(|e| e.to_string()),
                Err(reason) => Err(format!("featurization failed: {reason}")),
            };
            if let Err(reason) = &outcome {
                warn!("cell {combination:?} seed {seed} failed: {reason}");
            }
            CellResult {
                machine_type: combination.machine_type,
                machine_id: combination.machine_id,
                snr_db: combination.snr_db,
                model: config.model,
                seed,
                auc: outcome.as_ref().ok().copied(),
                error: outcome.err(),
            }
        })
        .collect()
}

/// Runs every (combination, seed) cell. Cells that fail are recorded with
/// their reason; the report is otherwise complete.
pub fn run_experiment<T: Scalar>(config: &PipelineConfig, manifest: &DatasetManifest, seeds: &[u64]) -> Result<EvalReport> {
    ensure(!seeds.is_empty(), || "no seeds given".into())?;
    config.validate()?;
    let sets = featurize_dataset::<T>(config, manifest)?;
    info!("evaluating {} combinations x {} seeds", sets.len(), seeds.len());
    Ok(EvalReport::from_cells(config.model, seeds, run_cells(config, &sets, seeds)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub cov_type: CovType,
    pub mean_auc: f64,
    pub std_auc: f64,
}

/// Average AUC over every set and seed for each `(k, cov_type)`.
pub fn sweep_gmm_sets<T: Scalar>(
    config: &PipelineConfig,
    sets: &[LabelledSet<T>],
    k_values: &[usize],
    cov_types: &[CovType],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    ensure(config.model.uses_density() && !config.model.uses_network(), || {
        format!("the sweep needs a mixture-only model, got {}", config.model)
    })?;
    ensure(!sets.is_empty() && !seeds.is_empty() && !k_values.is_empty() && !cov_types.is_empty(), || {
        "empty sweep grid".into()
    })?;
    let base = config.density_config();
    let mut rows = Vec::new();
    for &k in k_values {
        for &cov_type in cov_types {
            let mut cfg = config.clone();
            cfg.density = Some(DensityConfig {
                gmm: crate::density::GmmConfig { k, cov_type, ..base.gmm },
                ..base
            });
            let jobs: Vec<(&LabelledSet<T>, u64)> = sets.iter().flat_map(|s| seeds.iter().map(move |&x| (s, x))).collect();
            let aucs = jobs
                .par_iter()
                .map(|(set, seed)| evaluate_cell(&cfg, set, cell_seed(*seed, &set.combination, cfg.model)))
                .collect::<Result<Vec<_>>>()?;
            let (mean_auc, std_auc) = mean_std(&aucs).expect("non-empty grid");
            info!("sweep k={k} {}: mean AUC {mean_auc:.4}", cov_type.as_str());
            rows.push(SweepRow {
                k,
                cov_type,
                mean_auc,
                std_auc,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_gmm<T: Scalar>(
    config: &PipelineConfig,
    manifest: &DatasetManifest,
    k_values: &[usize],
    cov_types: &[CovType],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let sets = featurize_dataset::<T>(config, manifest)?
        .into_iter()
        .map(|(c, s)| s.map_err(|reason| AsdError::invalid(format!("{c:?}: {reason}"))))
        .collect::<Result<Vec<_>>>()?;
    sweep_gmm_sets(config, &sets, k_values, cov_types, seeds)
}

/// `k,cov_type,mean_auc,std_auc`
pub fn sweep_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "cov_type", "mean_auc", "std_auc"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.cov_type.as_str().to_string(),
            r.mean_auc.to_string(),
            r.std_auc.to_string(),
        ])?;
    }
    csv_string(w)
}
