//! Recordings on disk: PCM16 WAV I/O, the MIMII-style directory layout,
//! noise mixing at a target SNR and a synthetic benchmark generator.
//!
//! Layout: `<root>/<snr>dB/<machine_type>/id_<k>/{normal|abnormal}/<name>.wav`.
//! The SNR level may be omitted, in which case machine directories sit
//! directly under the root.

mod synth;

pub use synth::{
    factory_noise, generate_benchmark, synth_recording, AnomalyKind, BenchmarkConfig, SynthConfig,
};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{ensure, AsdError, Result};
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";
const PCM16_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineType {
    Fan,
    Pump,
    Slider,
    Valve,
    Synthetic,
}

impl MachineType {
    pub const ALL: [MachineType; 5] = [
        MachineType::Fan,
        MachineType::Pump,
        MachineType::Slider,
        MachineType::Valve,
        MachineType::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MachineType::Fan => "fan",
            MachineType::Pump => "pump",
            MachineType::Slider => "slider",
            MachineType::Valve => "valve",
            MachineType::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for MachineType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    /// Directory name used in the on-disk layout.
    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "abnormal",
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomalous => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingMeta {
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub recording_id: String,
    pub machine_type: MachineType,
    pub machine_id: u32,
    pub snr_db: Option<i32>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub recordings: Vec<RecordingMeta>,
}

impl DatasetManifest {
    pub fn full_path(&self, meta: &RecordingMeta) -> PathBuf {
        self.root.join(&meta.path)
    }

    pub fn expected_len(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    /// Decodes a recording and checks it against the manifest's rate and duration.
    pub fn load<T: Scalar>(&self, meta: &RecordingMeta) -> Result<Waveform<T>> {
        let path = self.full_path(meta);
        let w = read_wav(&path, Some(self.sample_rate))?;
        if w.len() != self.expected_len() {
            return Err(AsdError::Format {
                kind: "WAV",
                path,
                reason: format!("{} samples, expected {}", w.len(), self.expected_len()),
            });
        }
        Ok(w)
    }

    /// Every `(machine_type, machine_id, snr_db)` combination, sorted.
    pub fn combinations(&self) -> Vec<(MachineType, u32, Option<i32>)> {
        let mut c: Vec<_> = self.recordings.iter().map(|r| (r.machine_type, r.machine_id, r.snr_db)).collect();
        c.sort();
        c.dedup();
        c
    }

    pub fn select(&self, machine_type: MachineType, machine_id: u32, snr_db: Option<i32>) -> Vec<&RecordingMeta> {
        self.recordings
            .iter()
            .filter(|r| r.machine_type == machine_type && r.machine_id == machine_id && r.snr_db == snr_db)
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| AsdError::io(path, e))
    }

    /// Reads a manifest cache; the root is the directory holding it.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AsdError::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(m)
    }
}

pub fn read_wav<T: Scalar>(path: &Path, expected_rate: Option<u32>) -> Result<Waveform<T>> {
    let fmt_err = |reason: String| AsdError::Format {
        kind: "WAV",
        path: path.to_path_buf(),
        reason,
    };
    let file = fs::File::open(path).map_err(|e| AsdError::io(path, e))?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| fmt_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(fmt_err(format!(
            "unsupported encoding {:?} with {} bits, only PCM16 is read",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(fmt_err(format!("{} channels, expected mono", spec.channels)));
    }
    if let Some(rate) = expected_rate {
        if spec.sample_rate != rate {
            return Err(fmt_err(format!("sample rate {} Hz, expected {rate} Hz", spec.sample_rate)));
        }
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| T::lit(v as f64 / PCM16_SCALE)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| fmt_err(e.to_string()))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes mono PCM16, clipping to the representable range.
pub fn write_wav<T: Scalar>(path: &Path, w: &Waveform<T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AsdError::io(dir, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => AsdError::io(path, io),
        other => AsdError::Format {
            kind: "WAV",
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in w.samples() {
        let q = (s.as_f64() * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

fn parse_snr(name: &str) -> Option<i32> {
    name.strip_suffix("dB")?.parse().ok()
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    walkdir::WalkDir::new(dir)
        .min_depth(1)
        .max_depth(1)
        .sort_by_file_name()
        .into_iter()
        .map(|e| {
            e.map(walkdir::DirEntry::into_path).map_err(|e| {
                let path = e.path().unwrap_or(dir).to_path_buf();
                AsdError::io(path, e.into())
            })
        })
        .collect()
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn scan_machine(
    root: &Path,
    dir: &Path,
    machine_type: MachineType,
    snr_db: Option<i32>,
    out: &mut Vec<RecordingMeta>,
) -> Result<()> {
    for id_dir in sorted_dirs(dir)? {
        let name = file_name(&id_dir);
        let Some(machine_id) = name.strip_prefix("id_").and_then(|s| s.parse::<u32>().ok()) else {
            warn!("ignoring {}", id_dir.display());
            continue;
        };
        for label_dir in sorted_dirs(&id_dir)? {
            let label = match file_name(&label_dir).as_str() {
                "normal" => Label::Normal,
                "abnormal" => Label::Anomalous,
                _ => {
                    warn!("ignoring {}", label_dir.display());
                    continue;
                }
            };
            for file in sorted_dirs(&label_dir)? {
                if file.extension().and_then(|e| e.to_str()) != Some("wav") {
                    warn!("ignoring {}", file.display());
                    continue;
                }
                out.push(RecordingMeta {
                    path: file.strip_prefix(root).unwrap_or(&file).to_path_buf(),
                    recording_id: file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                    machine_type,
                    machine_id,
                    snr_db,
                    label,
                });
            }
        }
    }
    Ok(())
}

/// Walks the fixed layout. Sample rate and duration are taken from the
/// first file's header and checked for every file when it is loaded.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    ensure(root.is_dir(), || format!("dataset root {} is not a directory", root.display()))?;
    let mut recordings = Vec::new();
    for top in sorted_dirs(root)? {
        let name = file_name(&top);
        if !top.is_dir() {
            // manifest caches and run configs live next to the tree
            if !name.ends_with(".json") {
                warn!("ignoring {}", top.display());
            }
            continue;
        }
        if let Some(snr) = parse_snr(&name) {
            for machine_dir in sorted_dirs(&top)? {
                match MachineType::parse(&file_name(&machine_dir)) {
                    Some(m) if machine_dir.is_dir() => scan_machine(root, &machine_dir, m, Some(snr), &mut recordings)?,
                    _ => warn!("ignoring {}", machine_dir.display()),
                }
            }
        } else if let Some(m) = MachineType::parse(&name) {
            scan_machine(root, &top, m, None, &mut recordings)?;
        } else {
            warn!("ignoring {}", top.display());
        }
    }
    let first = recordings
        .first()
        .ok_or_else(|| AsdError::invalid(format!("no recordings found under {}", root.display())))?;
    let first_path = root.join(&first.path);
    let reader = hound::WavReader::open(&first_path).map_err(|e| AsdError::Format {
        kind: "WAV",
        path: first_path.clone(),
        reason: e.to_string(),
    })?;
    let sample_rate = reader.spec().sample_rate;
    let duration_s = reader.duration() as f64 / sample_rate as f64;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        sample_rate,
        duration_s,
        recordings,
    })
}

/// Uses the manifest cache when present, otherwise scans the tree.
pub fn open_dataset(root: &Path) -> Result<DatasetManifest> {
    let cache = root.join(MANIFEST_FILE);
    if cache.is_file() {
        DatasetManifest::read(&cache)
    } else {
        scan_dataset(root)
    }
}

/// Gain applied to `noise` so that `rms(signal) / rms(gain * noise)` equals `snr_db`.
pub fn snr_gain<T: Scalar>(signal: &Waveform<T>, noise: &Waveform<T>, snr_db: f64) -> Result<f64> {
    let (s, n) = (signal.rms().as_f64(), noise.rms().as_f64());
    ensure(s > 0.0, || "signal has zero RMS".into())?;
    ensure(n > 0.0, || "noise has zero RMS".into())?;
    ensure(snr_db.is_finite(), || "SNR must be finite".into())?;
    Ok(s / (n * 10f64.powf(snr_db / 20.0)))
}

/// `signal + g * noise` with the RMS-based gain from [`snr_gain`].
pub fn mix_at_snr<T: Scalar>(signal: &Waveform<T>, noise: &Waveform<T>, snr_db: f64) -> Result<Waveform<T>> {
    ensure(signal.len() == noise.len(), || {
        format!("signal has {} samples, noise {}", signal.len(), noise.len())
    })?;
    ensure(signal.sample_rate() == noise.sample_rate(), || "signal and noise sample rates differ".into())?;
    let g = T::lit(snr_gain(signal, noise, snr_db)?);
    let mixed = signal.samples().iter().zip(noise.samples()).map(|(&s, &n)| s + g * n).collect();
    Waveform::new(mixed, signal.sample_rate())
}
