use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use asd_core::dataset::{generate_benchmark, open_dataset, read_wav, Label};
use asd_core::density::Pooling;
use asd_core::dsp::MelAnalyzer;
use asd_core::evaluation::{
    cell_seed, featurize_dataset, run_experiment, sweep_gmm, sweep_to_csv, Combination, Detector, DetectorDoc,
    Featurizer,
};
use asd_core::featurize::{write_fvec, FeatureSequence, FvecManifest};
use asd_core::AsdError;

use crate::config::RunConfig;
use crate::{CliError, MelFormat};

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";

/// Writes through a temporary sibling file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| AsdError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| AsdError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| AsdError::io(path, e))?;
    Ok(())
}

fn write_effective(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&cfg.resolved()).map_err(AsdError::from)?;
    write_atomic(&dir.join(EFFECTIVE_CONFIG), text.as_bytes())
}

pub fn synth(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    cfg.synth.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let root = out.unwrap_or_else(|| cfg.dataset_root.clone());
    let manifest = generate_benchmark(&cfg.synth, &root)?;
    let effective = RunConfig {
        dataset_root: root.clone(),
        ..cfg.clone()
    };
    write_effective(&effective, &root)?;
    println!("wrote {} recordings to {}", manifest.recordings.len(), root.display());
    Ok(())
}

pub fn melspec(cfg: &RunConfig, wav: &Path, out: Option<&Path>, format: MelFormat) -> Result<(), CliError> {
    let params = cfg.pipeline.mel;
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let w = read_wav::<f64>(wav, Some(params.sample_rate))?;
    let mel = MelAnalyzer::<f64>::new(params)?.mel_spectrogram(&w)?;
    match format {
        MelFormat::Csv => {
            let mut text = String::new();
            for row in mel.values.rows() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(text, "{}", cells.join(","));
            }
            match out {
                Some(path) => write_atomic(path, text.as_bytes())?,
                None => std::io::stdout()
                    .write_all(text.as_bytes())
                    .map_err(|e| AsdError::io("<stdout>", e))?,
            }
        }
        MelFormat::Fvec => {
            let out = out.ok_or_else(|| CliError::Config("--format fvec needs --out".into()))?;
            // one vector per frame
            let id = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let seq = FeatureSequence::new(mel.values.t().to_owned(), id, "melspec")?;
            let frame_s = params.hop as f64 / params.sample_rate as f64;
            write_fvec(
                out,
                &seq,
                &FvecManifest {
                    source: wav.display().to_string(),
                    extractor_tag: "melspec".into(),
                    window_s: params.n_fft as f64 / params.sample_rate as f64,
                    hop_s: frame_s,
                },
            )?;
        }
    }
    eprintln!("{} mels x {} frames", mel.n_mels(), mel.n_frames());
    Ok(())
}

fn model_file_name(c: &Combination, model: &str) -> String {
    let snr = c.snr_db.map(|s| format!("_{s}dB")).unwrap_or_default();
    format!("{}_id{}{snr}_{model}.json", c.machine_type, c.machine_id)
}

pub fn train(cfg: &RunConfig, data: Option<PathBuf>) -> Result<(), CliError> {
    cfg.validate()?;
    let root = data.unwrap_or_else(|| cfg.dataset_root.clone());
    let manifest = open_dataset(&root)?;
    let anomalous = manifest.recordings.iter().filter(|r| r.label == Label::Anomalous).count();
    if anomalous > 0 {
        return Err(AsdError::invalid(format!(
            "refusing to train: {anomalous} anomalous recordings under {}",
            root.display()
        ))
        .into());
    }
    let seed = cfg.seeds[0];
    let models_dir = cfg.output_dir.join("models");
    for (combination, set) in featurize_dataset::<f64>(&cfg.pipeline, &manifest)? {
        let set = set.map_err(AsdError::invalid)?;
        let detector = Detector::fit(&cfg.pipeline, &set.features, cell_seed(seed, &combination, cfg.pipeline.model))?;
        let path = models_dir.join(model_file_name(&combination, cfg.pipeline.model.as_str()));
        let text = serde_json::to_string(&detector.to_doc(&cfg.pipeline)).map_err(AsdError::from)?;
        write_atomic(&path, text.as_bytes())?;
        println!("{}: trained on {} recordings", path.display(), set.features.len());
    }
    write_effective(
        &RunConfig {
            dataset_root: root,
            seeds: vec![seed],
            ..cfg.clone()
        },
        &cfg.output_dir,
    )
}

pub fn score(model_path: &Path, inputs: &[PathBuf], pooling: Option<Pooling>, out: Option<&Path>) -> Result<(), CliError> {
    let text = fs::read_to_string(model_path).map_err(|e| AsdError::io(model_path, e))?;
    let doc: DetectorDoc = serde_json::from_str(&text).map_err(AsdError::from)?;
    let detector = Detector::<f64>::from_doc(&doc)?;
    let featurizer = Featurizer::<f64>::new(&doc.pipeline)?;
    let pooling = pooling.unwrap_or(detector.pooling);
    let mut csv = String::from("recording_id,score\n");
    for input in inputs {
        let seq = featurizer.file(input)?;
        let s = detector.score_with(&seq, pooling)?;
        if !s.is_finite() {
            return Err(AsdError::Numeric(format!("non-finite score for {}", input.display())).into());
        }
        let _ = writeln!(csv, "{},{s}", seq.source_id);
    }
    match out {
        Some(path) => write_atomic(path, csv.as_bytes()),
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| AsdError::io("<stdout>", e).into()),
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let manifest = open_dataset(&cfg.dataset_root)?;
    let report = run_experiment::<f64>(&cfg.pipeline, &manifest, &cfg.seeds)?;
    write_atomic(&cfg.output_dir.join("report.csv"), report.to_csv()?.as_bytes())?;
    write_atomic(&cfg.output_dir.join("report.json"), report.to_json()?.as_bytes())?;
    write_effective(cfg, &cfg.output_dir)?;
    println!("machine_type machine_id snr_db model      AUC (mean +- std)");
    for g in &report.groups {
        let snr = g.snr_db.map_or_else(|| "-".into(), |s| format!("{s} dB"));
        let auc = match (g.mean_auc, g.std_auc) {
            (Some(m), Some(s)) => format!("{m:.4} +- {s:.4}"),
            _ => "n/a".into(),
        };
        let flag = if g.complete { String::new() } else { format!("  INCOMPLETE ({} failed)", g.n_failed) };
        println!("{:<12} {:<10} {:<6} {:<9} {auc}{flag}", g.machine_type, g.machine_id, snr, g.model);
    }
    if !report.is_complete() {
        eprintln!("asd: some cells failed, see report.json for reasons");
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let manifest = open_dataset(&cfg.dataset_root)?;
    let rows = sweep_gmm::<f64>(&cfg.pipeline, &manifest, &cfg.sweep.k_values, &cfg.sweep.cov_types, &cfg.seeds)?;
    write_atomic(&cfg.output_dir.join("sweep.csv"), sweep_to_csv(&rows)?.as_bytes())?;
    write_effective(cfg, &cfg.output_dir)?;
    for r in &rows {
        println!("k={:<3} {:<8} {:.4} +- {:.4}", r.k, r.cov_type.as_str(), r.mean_auc, r.std_auc);
    }
    Ok(())
}
