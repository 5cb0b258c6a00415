//! Waveform to log-Mel front end.
//!
//! The pipeline is `Waveform -> stft -> power spectrogram -> Mel filterbank ->
//! dB`, followed by an optional per-recording min-max scaling into `[0, 1]`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, AsdError, Result};
use crate::scalar::Scalar;

/// Floor applied to Mel energies before taking the logarithm.
pub const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        ensure(sample_rate > 0, || "sample rate must be positive".into())?;
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AsdError::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![T::zero(); len], sample_rate)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> T {
        if self.samples.is_empty() {
            return T::zero();
        }
        let sum_sq: T = self.samples.iter().map(|&s| s * s).sum();
        (sum_sq / T::from_usize_lossy(self.samples.len())).sqrt()
    }
}

/// Power spectrogram with `n_fft / 2 + 1` rows and one column per frame.
#[derive(Debug, Clone)]
pub struct Spectrogram<T> {
    pub power: Array2<T>,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn n_bins(&self) -> usize {
        self.power.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.power.ncols()
    }

    /// Centre frequency of STFT bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.n_fft as f64
    }
}

#[derive(Debug, Clone)]
pub struct MelFilterbank<T> {
    /// `n_mels x (n_fft / 2 + 1)` triangular weights.
    pub weights: Array2<T>,
    /// Filter edge/centre frequencies in Hz, `n_mels + 2` entries.
    pub mel_centers: Vec<f64>,
}

impl<T: Scalar> MelFilterbank<T> {
    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    /// Hz support `(left, center, right)` of filter `m`.
    pub fn support(&self, m: usize) -> (f64, f64, f64) {
        (
            self.mel_centers[m],
            self.mel_centers[m + 1],
            self.mel_centers[m + 2],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelParams {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// Upper band edge in Hz; `None` means Nyquist.
    pub fmax: Option<f64>,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 1024,
            hop: 512,
            n_mels: 64,
            fmin: 0.0,
            fmax: None,
        }
    }
}

impl MelParams {
    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// STFT frames per second of audio.
    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.sample_rate > 0, || "sample_rate must be positive".into())?;
        ensure(self.n_fft >= 2, || format!("n_fft must be >= 2, got {}", self.n_fft))?;
        ensure(self.hop >= 1, || "hop must be >= 1".into())?;
        ensure(self.n_mels >= 1, || "n_mels must be >= 1".into())?;
        ensure(self.n_mels < self.n_fft / 2 + 1, || {
            format!(
                "n_mels ({}) must be smaller than the number of STFT bins ({})",
                self.n_mels,
                self.n_fft / 2 + 1
            )
        })?;
        let nyquist = self.sample_rate as f64 / 2.0;
        let fmax = self.fmax_hz();
        ensure(self.fmin >= 0.0 && self.fmin < fmax, || {
            format!("need 0 <= fmin < fmax, got fmin={} fmax={fmax}", self.fmin)
        })?;
        ensure(fmax <= nyquist, || {
            format!("fmax {fmax} Hz exceeds Nyquist {nyquist} Hz")
        })
    }
}

#[derive(Debug, Clone)]
pub struct MelSpectrogram<T> {
    /// `n_mels x frames`, in dB or in `[0, 1]` once normalized.
    pub values: Array2<T>,
    pub params: MelParams,
    pub normalized: bool,
}

impl<T: Scalar> MelSpectrogram<T> {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Direct `O(T^2)` evaluation of the discrete Fourier transform.
///
/// Used as the reference for the FFT-backed STFT.
pub fn dft_reference<T: Scalar>(signal: &[T]) -> Result<Vec<Complex<T>>> {
    ensure(!signal.is_empty(), || "DFT of an empty signal".into())?;
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(AsdError::invalid("DFT input contains non-finite values"));
    }
    let n = signal.len();
    let two_pi = T::lit(2.0 * PI);
    let len = T::from_usize_lossy(n);
    let out = (0..n)
        .map(|k| {
            let mut re = T::zero();
            let mut im = T::zero();
            for (t, &x) in signal.iter().enumerate() {
                // reduce k*t modulo n so the angle stays in [0, 2pi)
                let phase = two_pi * T::from_usize_lossy((k * t) % n) / len;
                re += x * phase.cos();
                im -= x * phase.sin();
            }
            Complex::new(re, im)
        })
        .collect();
    Ok(out)
}

/// Symmetric Hann window of length `n`.
pub fn hann_window<T: Scalar>(n: usize) -> Vec<T> {
    if n == 1 {
        return vec![T::one()];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| T::lit(0.5 - 0.5 * (2.0 * PI * i as f64 / denom).cos()))
        .collect()
}

/// Number of STFT frames produced for `len` samples with centre padding.
pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
    let padded = len + 2 * (n_fft / 2);
    1 + (padded - n_fft) / hop
}

fn reflect_pad<T: Copy>(x: &[T], pad: usize) -> Vec<T> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Reusable STFT + Mel analysis state for a fixed [`MelParams`].
pub struct MelAnalyzer<T: Scalar> {
    params: MelParams,
    window: Vec<T>,
    fft: Arc<dyn Fft<T>>,
    filterbank: MelFilterbank<T>,
}

impl<T: Scalar> MelAnalyzer<T> {
    pub fn new(params: MelParams) -> Result<Self> {
        params.validate()?;
        let filterbank = mel_filterbank(
            params.sample_rate,
            params.n_fft,
            params.n_mels,
            params.fmin,
            params.fmax_hz(),
        )?;
        let fft = FftPlanner::new().plan_fft_forward(params.n_fft);
        Ok(Self {
            params,
            window: hann_window(params.n_fft),
            fft,
            filterbank,
        })
    }

    pub fn params(&self) -> &MelParams {
        &self.params
    }

    pub fn filterbank(&self) -> &MelFilterbank<T> {
        &self.filterbank
    }

    pub fn stft(&self, w: &Waveform<T>) -> Result<Spectrogram<T>> {
        stft_with(w, self.params.n_fft, self.params.hop, &self.window, &*self.fft)
    }

    pub fn mel_spectrogram(&self, w: &Waveform<T>) -> Result<MelSpectrogram<T>> {
        if w.sample_rate() != self.params.sample_rate {
            return Err(AsdError::invalid(format!(
                "sample rate {} Hz does not match configured {} Hz",
                w.sample_rate(),
                self.params.sample_rate
            )));
        }
        let spec = self.stft(w)?;
        let mel = self.filterbank.weights.dot(&spec.power);
        let floor = T::lit(POWER_FLOOR);
        let ten = T::lit(10.0);
        let values = mel.mapv(|p| ten * p.max(floor).log10());
        Ok(MelSpectrogram {
            values,
            params: self.params,
            normalized: false,
        })
    }
}

fn stft_with<T: Scalar>(
    w: &Waveform<T>,
    n_fft: usize,
    hop: usize,
    window: &[T],
    fft: &dyn Fft<T>,
) -> Result<Spectrogram<T>> {
    ensure(n_fft >= 2, || format!("n_fft must be >= 2, got {n_fft}"))?;
    ensure(hop >= 1, || "hop must be >= 1".into())?;
    let x = w.samples();
    let pad = n_fft / 2;
    // reflection needs at least pad + 1 samples
    if x.len() <= pad || x.len() + 2 * pad < n_fft {
        return Err(AsdError::invalid(format!(
            "signal of {} samples too short for n_fft {n_fft}",
            x.len()
        )));
    }
    let padded = reflect_pad(x, pad);
    let frames = 1 + (padded.len() - n_fft) / hop;
    let bins = n_fft / 2 + 1;
    let scale = T::from_usize_lossy(n_fft);
    let mut power = Array2::<T>::zeros((bins, frames));
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n_fft];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    for (f, mut col) in power.axis_iter_mut(Axis(1)).enumerate() {
        let start = f * hop;
        for ((b, &s), &wv) in buf.iter_mut().zip(&padded[start..start + n_fft]).zip(window) {
            *b = Complex::new(s * wv, T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, c) in col.iter_mut().zip(&buf[..bins]) {
            *p = c.norm_sqr() / scale;
        }
    }
    Ok(Spectrogram {
        power,
        n_fft,
        hop,
        sample_rate: w.sample_rate(),
    })
}

/// Hann-windowed, centre-padded short-time power spectrum.
pub fn stft<T: Scalar>(w: &Waveform<T>, n_fft: usize, hop: usize) -> Result<Spectrogram<T>> {
    ensure(n_fft >= 2, || format!("n_fft must be >= 2, got {n_fft}"))?;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    stft_with(w, n_fft, hop, &hann_window(n_fft), &*fft)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with peak 1, centres equally spaced on the Mel scale.
pub fn mel_filterbank<T: Scalar>(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<MelFilterbank<T>> {
    ensure(sample_rate > 0, || "sample_rate must be positive".into())?;
    ensure(n_fft >= 2, || format!("n_fft must be >= 2, got {n_fft}"))?;
    ensure(n_mels >= 1, || "n_mels must be >= 1".into())?;
    let nyquist = sample_rate as f64 / 2.0;
    ensure(fmax <= nyquist, || {
        format!("fmax {fmax} Hz exceeds Nyquist {nyquist} Hz")
    })?;
    ensure(fmin >= 0.0 && fmin < fmax, || {
        format!("need 0 <= fmin < fmax, got fmin={fmin} fmax={fmax}")
    })?;

    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let step = (mel_hi - mel_lo) / (n_mels + 1) as f64;
    let mut centers: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();
    // pin the end points against round-off in the mel round trip
    centers[0] = fmin;
    centers[n_mels + 1] = fmax;

    let bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut weights = Array2::<T>::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (left, center, right) = (centers[m], centers[m + 1], centers[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            weights[[m, k]] = T::lit(w);
        }
    }
    Ok(MelFilterbank {
        weights,
        mel_centers: centers,
    })
}

pub fn mel_spectrogram<T: Scalar>(w: &Waveform<T>, params: &MelParams) -> Result<MelSpectrogram<T>> {
    MelAnalyzer::new(*params)?.mel_spectrogram(w)
}

/// Per-recording min-max scaling into `[0, 1]`; a constant matrix maps to zeros.
pub fn normalize_01<T: Scalar>(m: &MelSpectrogram<T>) -> MelSpectrogram<T> {
    let (lo, hi) = m
        .values
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let values = if range > T::zero() {
        m.values.mapv(|v| ((v - lo) / range).max(T::zero()).min(T::one()))
    } else {
        Array2::zeros(m.values.raw_dim())
    };
    MelSpectrogram {
        values,
        params: m.params,
        normalized: true,
    }
}
