//! Synthetic machine sounds with seeded faults, and a benchmark tree
//! generator that mixes them with factory-like noise at several SNRs.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{mix_at_snr, write_wav, DatasetManifest, Label, MachineType, RecordingMeta, MANIFEST_FILE};
use crate::dsp::Waveform;
use crate::error::{ensure, AsdError, Result};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

/// Peak amplitude of a click relative to the clean signal RMS.
const CLICK_GAIN: f64 = 8.0;
/// Decay time constant of a click, in seconds.
const CLICK_DECAY_S: f64 = 0.004;
const DROPOUT_SPAN_S: f64 = 2.0;
const MODULATION_SPAN_S: f64 = 3.0;
const MODULATION_HZ: f64 = 4.0;
/// Peak level of the mixed recordings written to disk.
const OUTPUT_PEAK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    PitchShift,
    TransientClicks,
    HarmonicDropout,
    AmplitudeModulation,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [
        AnomalyKind::PitchShift,
        AnomalyKind::TransientClicks,
        AnomalyKind::HarmonicDropout,
        AnomalyKind::AmplitudeModulation,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub base_f0: f64,
    pub n_harmonics: usize,
    /// White-noise RMS relative to the harmonic signal RMS.
    pub noise_level: f64,
    pub anomaly_kinds: Vec<AnomalyKind>,
    pub seed: u64,
    pub sample_rate: u32,
    pub duration_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_normal: 60,
            n_anomalous: 20,
            base_f0: 150.0,
            n_harmonics: 12,
            noise_level: 0.05,
            anomaly_kinds: AnomalyKind::ALL.to_vec(),
            seed: 0,
            sample_rate: 16000,
            duration_s: 10.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.n_normal >= 1 && self.n_anomalous >= 1, || "recording counts must be >= 1".into())?;
        ensure(self.n_harmonics >= 1, || "need at least one harmonic".into())?;
        let nyquist = self.sample_rate as f64 / 2.0;
        ensure(self.base_f0 > 0.0 && self.base_f0 < nyquist / self.n_harmonics as f64, || {
            format!(
                "base_f0 {} Hz must be below Nyquist / n_harmonics = {} Hz",
                self.base_f0,
                nyquist / self.n_harmonics as f64
            )
        })?;
        ensure(self.noise_level >= 0.0 && self.noise_level.is_finite(), || "noise_level must be >= 0".into())?;
        ensure(!self.anomaly_kinds.is_empty(), || "anomaly_kinds is empty".into())?;
        ensure(self.sample_rate > 0 && self.duration_s > 0.0, || "invalid sample rate or duration".into())
    }

    fn len(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Random `[start, end)` sample span of `span_s` seconds, clipped to the signal.
fn random_span(rng: &mut ChaCha8Rng, len: usize, span: usize) -> (usize, usize) {
    let span = span.min(len);
    let start = rng.random_range(0..=len - span);
    (start, start + span)
}

/// One recording: harmonics of `base_f0` with `1/k` amplitudes and random
/// phases, plus white noise. Anomalous recordings carry one seeded fault
/// drawn from `cfg.anomaly_kinds`.
pub fn synth_recording<T: Scalar>(cfg: &SynthConfig, anomalous: bool, seed: u64) -> Result<Waveform<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, sr) = (cfg.len(), cfg.sample_rate as f64);
    let phases: Vec<f64> = (0..cfg.n_harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let amps: Vec<f64> = (1..=cfg.n_harmonics)
        .map(|k| (1.0 + 0.1 * rng.random_range(-1.0..1.0)) / k as f64)
        .collect();
    let kind = anomalous.then(|| cfg.anomaly_kinds[rng.random_range(0..cfg.anomaly_kinds.len())]);

    let f0 = match kind {
        Some(AnomalyKind::PitchShift) => cfg.base_f0 * rng.random_range(1.05..=1.2),
        _ => cfg.base_f0,
    };
    let dropout = match kind {
        Some(AnomalyKind::HarmonicDropout) => Some(random_span(&mut rng, n, (DROPOUT_SPAN_S * sr) as usize)),
        _ => None,
    };
    let keep_below = cfg.n_harmonics.div_ceil(2);
    let nyquist = sr / 2.0;
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let dropped = dropout.is_some_and(|(a, b)| (a..b).contains(&i));
            (0..cfg.n_harmonics)
                .filter(|&h| !(dropped && h >= keep_below))
                .filter(|&h| (h + 1) as f64 * f0 < nyquist)
                .map(|h| amps[h] * (2.0 * PI * (h + 1) as f64 * f0 * t + phases[h]).sin())
                .sum()
        })
        .collect();

    match kind {
        Some(AnomalyKind::AmplitudeModulation) => {
            let (a, b) = random_span(&mut rng, n, (MODULATION_SPAN_S * sr) as usize);
            for (i, v) in x.iter_mut().enumerate().take(b).skip(a) {
                *v *= 1.0 + 0.5 * (2.0 * PI * MODULATION_HZ * i as f64 / sr).sin();
            }
        }
        Some(AnomalyKind::TransientClicks) => {
            let level = CLICK_GAIN * rms(&x);
            let count = rng.random_range(3..=8);
            let decay_len = (8.0 * CLICK_DECAY_S * sr) as usize;
            for _ in 0..count {
                let at = rng.random_range(0..n);
                for j in 0..decay_len.min(n - at) {
                    let env = (-(j as f64) / (CLICK_DECAY_S * sr)).exp();
                    x[at + j] += level * env * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        _ => {}
    }

    if cfg.noise_level > 0.0 {
        let level = cfg.noise_level * rms(&x);
        for v in &mut x {
            *v += level * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Waveform::new(x.into_iter().map(T::lit).collect(), cfg.sample_rate)
}

/// Stationary background noise: white noise through a one-pole low-pass,
/// plus a weaker broadband floor.
pub fn factory_noise<T: Scalar>(len: usize, sample_rate: u32, seed: u64) -> Result<Waveform<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = 0.9;
    let mut state = 0.0;
    let x = (0..len)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            state = a * state + (1.0 - a) * w;
            T::lit(3.0 * state + 0.1 * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    Waveform::new(x, sample_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub machine_ids: Vec<u32>,
    pub snr_db: Vec<i32>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            machine_ids: vec![0],
            snr_db: vec![-6, 0, 6],
        }
    }
}

impl BenchmarkConfig {
    /// Each machine id gets its own fundamental.
    pub fn machine_config(&self, id: u32) -> SynthConfig {
        SynthConfig {
            base_f0: self.synth.base_f0 * (1.0 + 0.1 * id as f64),
            ..self.synth.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.machine_ids.is_empty(), || "machine_ids is empty".into())?;
        ensure(!self.snr_db.is_empty(), || "snr_db is empty".into())?;
        for &id in &self.machine_ids {
            self.machine_config(id).validate()?;
        }
        Ok(())
    }
}

fn recording_name(seed: u64, id: u32, label: Label, index: usize) -> String {
    let tag = [id.to_string(), label.dir_name().to_string(), index.to_string()];
    let hi = derive_seed(seed, &["uuid-hi", &tag[0], &tag[1], &tag[2]]);
    let lo = derive_seed(seed, &["uuid-lo", &tag[0], &tag[1], &tag[2]]);
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&hi.to_le_bytes());
    bytes[8..].copy_from_slice(&lo.to_le_bytes());
    uuid::Builder::from_random_bytes(bytes).into_uuid().to_string()
}

/// Writes the benchmark tree under `root` plus a `manifest.json` cache.
///
/// The same clean recording is mixed into every SNR tier, each with its own
/// noise draw, so tiers differ only in the noise level.
pub fn generate_benchmark(cfg: &BenchmarkConfig, root: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(|e| AsdError::io(root, e))?;
    let seed = cfg.synth.seed;
    let mut jobs = Vec::new();
    for &id in &cfg.machine_ids {
        for (label, count) in [(Label::Normal, cfg.synth.n_normal), (Label::Anomalous, cfg.synth.n_anomalous)] {
            for index in 0..count {
                jobs.push((id, label, index));
            }
        }
    }
    use rayon::prelude::*;
    let recordings: Vec<Vec<RecordingMeta>> = jobs
        .par_iter()
        .map(|&(id, label, index)| -> Result<Vec<RecordingMeta>> {
            let tag = [id.to_string(), label.dir_name().to_string(), index.to_string()];
            let synth = cfg.machine_config(id);
            let clean: Waveform<f64> = synth_recording(
                &synth,
                label == Label::Anomalous,
                derive_seed(seed, &["clean", &tag[0], &tag[1], &tag[2]]),
            )?;
            let name = recording_name(seed, id, label, index);
            let mut metas = Vec::new();
            for &snr in &cfg.snr_db {
                let noise = factory_noise(
                    clean.len(),
                    synth.sample_rate,
                    derive_seed(seed, &["noise", &snr.to_string(), &tag[0], &tag[1], &tag[2]]),
                )?;
                let mixed = mix_at_snr(&clean, &noise, snr as f64)?;
                let peak = mixed.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let scaled = Waveform::new(mixed.samples().iter().map(|v| v * OUTPUT_PEAK / peak).collect(), synth.sample_rate)?;
                let rel = Path::new(&format!("{snr}dB"))
                    .join(MachineType::Synthetic.as_str())
                    .join(format!("id_{id}"))
                    .join(label.dir_name())
                    .join(format!("{name}.wav"));
                write_wav(&root.join(&rel), &scaled)?;
                metas.push(RecordingMeta {
                    path: rel,
                    recording_id: name.clone(),
                    machine_type: MachineType::Synthetic,
                    machine_id: id,
                    snr_db: Some(snr),
                    label,
                });
            }
            Ok(metas)
        })
        .collect::<Result<_>>()?;
    let mut recordings: Vec<RecordingMeta> = recordings.into_iter().flatten().collect();
    recordings.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        sample_rate: cfg.synth.sample_rate,
        duration_s: cfg.synth.duration_s,
        recordings,
    };
    manifest.write(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}
