//! Evaluation protocol: balanced splits, rank-based AUC, seeded multi-cell
//! experiments with mean and standard deviation per combination, and the
//! mixture-size sweep.

mod auc;
mod experiment;
mod pipeline;
mod split;

pub use auc::{roc_auc, roc_auc_from, ScoredRecording};
pub use experiment::{
    cell_seed, evaluate_cell, featurize_dataset, mean_std, run_experiment, sweep_gmm, sweep_gmm_sets, sweep_to_csv,
    CellResult, Combination, EvalReport, GroupSummary, LabelledSet, SweepRow, SWEEP_K_VALUES,
};
pub use pipeline::{
    Detector, DetectorDoc, ExternalConfig, Featurizer, ModelTag, PipelineConfig, DEFAULT_MIXTURE_K,
    EXTERNAL_PCA_RETAIN, LAMP_MIXTURE_K,
};
pub use split::{make_split, EvalSplit};
