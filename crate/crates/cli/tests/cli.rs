use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn asd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asd"))
        .args(args)
        .output()
        .expect("spawn asd")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small tree: 12 normal and 4 anomalous 2 s clips at one SNR.
fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("config.json");
    let text = format!(
        r#"{{"dataset_root": {root:?}, "output_dir": {out:?}, "seeds": [0, 1],
            "synth": {{"synth": {{"n_normal": 12, "n_anomalous": 4, "duration_s": 2, "seed": 5}}, "snr_db": [6]}}
            {extra}}}"#,
        root = dir.join("data"),
        out = dir.join("out"),
    );
    fs::write(&cfg, text).unwrap();
    cfg
}

fn wavs(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "wav") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_then_evaluate_writes_reports() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();

    let o = asd(&["--config", cfg, "synth"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(wavs(&tmp.path().join("data")).len(), 16);
    assert!(tmp.path().join("data/effective_config.json").exists());

    let o = asd(&["--config", cfg, "evaluate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("machine_type,machine_id,snr_db,model,seed,auc"));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let auc: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&auc));
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(json["groups"].as_array().unwrap().len(), 1);

    // effective config is complete and reloadable
    let eff = tmp.path().join("out/effective_config.json");
    let o = asd(&["--config", eff.to_str().unwrap(), "--seed", "0", "evaluate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn melspec_csv_shape() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    assert!(asd(&["--config", cfg, "synth"]).status.success());
    let wav = wavs(&tmp.path().join("data")).remove(0);
    let out = tmp.path().join("mel.csv");
    let o = asd(&["melspec", wav.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 64);
    // 2 s at hop 512: 1 + 32000 / 512 = 63 frames
    assert!(rows.iter().all(|r| r.split(',').count() == 63));
    assert!(rows.iter().flat_map(|r| r.split(',')).all(|v| v.parse::<f64>().unwrap().is_finite()));

    let fv = tmp.path().join("mel.fvec");
    let o = asd(&["melspec", wav.to_str().unwrap(), "--format", "fvec", "--out", fv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fv.exists());
}

#[test]
fn train_refuses_anomalous_data() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    assert!(asd(&["--config", cfg, "synth"]).status.success());
    let o = asd(&["--config", cfg, "train"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("anomalous"));
    assert!(!tmp.path().join("out/models").exists());
}

#[test]
fn train_and_score_rank_anomalies_higher() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    assert!(asd(&["--config", cfg, "synth"]).status.success());

    let id_dir = tmp.path().join("data/6dB/synthetic/id_0");
    let train_root = tmp.path().join("train");
    let dst = train_root.join("6dB/synthetic/id_0/normal");
    fs::create_dir_all(&dst).unwrap();
    let normals = wavs(&id_dir.join("normal"));
    for p in &normals[..8] {
        fs::copy(p, dst.join(p.file_name().unwrap())).unwrap();
    }

    let o = asd(&["--config", cfg, "train", "--data", train_root.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = tmp.path().join("out/models/synthetic_id0_6dB_patch_gmm.json");
    assert!(model.exists());

    let held_out: Vec<PathBuf> = normals[8..].to_vec();
    let anomalous = wavs(&id_dir.join("abnormal"));
    let out = tmp.path().join("scores.csv");
    let mut args = vec!["score".to_string(), model.display().to_string()];
    args.extend(held_out.iter().chain(&anomalous).map(|p| p.display().to_string()));
    args.extend(["--out".into(), out.display().to_string()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = asd(&args);
    assert!(o.status.success(), "{}", stderr(&o));

    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("recording_id,score"));
    let scores: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), held_out.len() + anomalous.len());
    let (n, a) = scores.split_at(held_out.len());
    let max_n = n.iter().cloned().fold(f64::MIN, f64::max);
    let min_a = a.iter().cloned().fold(f64::MAX, f64::min);
    assert!(min_a > max_n, "normal {n:?} anomalous {a:?}");

    // sum pooling keeps the ranking for equal-length clips
    let o = asd(&["score", model.to_str().unwrap(), anomalous[0].to_str().unwrap(), "--pooling", "sum"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn sweep_writes_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), r#", "sweep": {"k_values": [1, 2], "cov_types": ["diagonal", "full"]}"#);
    let cfg = cfg.to_str().unwrap();
    assert!(asd(&["--config", cfg, "synth"]).status.success());
    let o = asd(&["--config", cfg, "--seed", "3", "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,cov_type,mean_auc,std_auc");
    assert_eq!(lines.len(), 5);
    let eff: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/effective_config.json")).unwrap()).unwrap();
    assert_eq!(eff["seeds"], serde_json::json!([3]));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();

    let o = asd(&["--config", tmp.path().join("missing.json").to_str().unwrap(), "evaluate"]);
    assert_eq!(o.status.code(), Some(2));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(asd(&["--config", bad.to_str().unwrap(), "evaluate"]).status.code(), Some(2));

    let empty_seeds = tmp.path().join("seeds.json");
    fs::write(&empty_seeds, r#"{"seeds": []}"#).unwrap();
    assert_eq!(asd(&["--config", empty_seeds.to_str().unwrap(), "evaluate"]).status.code(), Some(2));

    let junk = tmp.path().join("junk.wav");
    fs::write(&junk, b"not a wav").unwrap();
    let o = asd(&["melspec", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, format!(r#"{{"dataset_root": {:?}}}"#, tmp.path().join("nowhere"))).unwrap();
    assert_eq!(asd(&["--config", cfg.to_str().unwrap(), "evaluate"]).status.code(), Some(3));

    assert_ne!(asd(&["--model", "bogus", "evaluate"]).status.code(), Some(0));
}
