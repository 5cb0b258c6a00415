//! Windowed feature extraction from Mel-spectrograms and feature standardization.

mod fvec;

pub use fvec::{fvec_sidecar_path, read_fvec, read_fvec_manifest, write_fvec, FvecManifest, FVEC_MAGIC};

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{ensure, AsdError, Result};
use crate::scalar::Scalar;

/// Minimum standard deviation kept by [`fit_stats`].
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub window_frames: usize,
    pub hop_frames: usize,
    /// Flatten each window column by column into an `n_mels * window_frames`
    /// vector. When unset each window is averaged over time instead.
    pub flatten: bool,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            window_frames: 5,
            hop_frames: 3,
            flatten: true,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.window_frames >= 1, || "window_frames must be >= 1".into())?;
        ensure(self.hop_frames >= 1, || "hop_frames must be >= 1".into())
    }

    /// Window count for `frames` columns: `ceil((frames - n) / h) + 1`.
    pub fn window_count(&self, frames: usize) -> Option<usize> {
        if frames < self.window_frames || self.window_frames == 0 || self.hop_frames == 0 {
            return None;
        }
        Some((frames - self.window_frames).div_ceil(self.hop_frames) + 1)
    }
}

/// Feature vectors of one recording, one row per window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T> {
    pub vectors: Array2<T>,
    pub source_id: String,
    pub extractor_tag: String,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn new(vectors: Array2<T>, source_id: impl Into<String>, extractor_tag: impl Into<String>) -> Result<Self> {
        ensure(vectors.nrows() >= 1, || "feature sequence needs at least one vector".into())?;
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(AsdError::invalid("feature sequence contains non-finite values"));
        }
        Ok(Self {
            vectors,
            source_id: source_id.into(),
            extractor_tag: extractor_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vector(&self, i: usize) -> ArrayView1<'_, T> {
        self.vectors.row(i)
    }

    /// Replaces the vectors, keeping the identifiers.
    pub fn map_vectors(&self, vectors: Array2<T>) -> Self {
        Self {
            vectors,
            source_id: self.source_id.clone(),
            extractor_tag: self.extractor_tag.clone(),
        }
    }
}

/// Copies columns `start..start + width` of `values`, repeating the last
/// column for indices past the end.
fn edge_padded_columns<T: Scalar>(values: &Array2<T>, start: usize, width: usize) -> Array2<T> {
    let last = values.ncols() - 1;
    Array2::from_shape_fn((values.nrows(), width), |(r, c)| values[[r, (start + c).min(last)]])
}

/// Sliding windows over the columns of a normalized Mel-spectrogram.
pub fn sliding_patches<T: Scalar>(
    m: &MelSpectrogram<T>,
    cfg: &PatchConfig,
    source_id: &str,
) -> Result<FeatureSequence<T>> {
    cfg.validate()?;
    ensure(m.normalized, || "sliding_patches expects a normalized Mel-spectrogram".into())?;
    let frames = m.n_frames();
    let count = cfg.window_count(frames).ok_or_else(|| {
        AsdError::invalid(format!(
            "window of {} frames exceeds spectrogram of {frames} frames",
            cfg.window_frames
        ))
    })?;
    let mels = m.n_mels();
    let n = cfg.window_frames;
    let dim = if cfg.flatten { mels * n } else { mels };
    let mut out = Array2::<T>::zeros((count, dim));
    let last = frames - 1;
    let inv_n = T::one() / T::from_usize_lossy(n);
    for (w, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let start = w * cfg.hop_frames;
        if cfg.flatten {
            // frequency varies fastest
            for j in 0..n {
                let col = m.values.column((start + j).min(last));
                row.slice_mut(s![j * mels..(j + 1) * mels]).assign(&col);
            }
        } else {
            for j in 0..n {
                let col = m.values.column((start + j).min(last));
                row.scaled_add(inv_n, &col);
            }
        }
    }
    FeatureSequence::new(out, source_id, "patch")
}

/// Inverse of the column-major flattening done by [`sliding_patches`].
pub fn unflatten_patch<T: Scalar>(v: ArrayView1<'_, T>, n_mels: usize) -> Result<Array2<T>> {
    ensure(n_mels >= 1 && v.len() % n_mels == 0, || {
        format!("vector of length {} is not a multiple of {n_mels}", v.len())
    })?;
    let frames = v.len() / n_mels;
    Ok(Array2::from_shape_fn((n_mels, frames), |(f, j)| v[j * n_mels + f]))
}

/// Splits a Mel-spectrogram into windows given in seconds.
///
/// A window starts at every hop position inside the recording and the tail is
/// edge-padded, so 10 s with 1 s windows and 0.5 s hop gives 20 slices. A
/// window spanning the whole recording gives exactly one slice.
pub fn second_windows<T: Scalar>(
    m: &MelSpectrogram<T>,
    window_s: f64,
    hop_s: f64,
) -> Result<Vec<MelSpectrogram<T>>> {
    ensure(window_s > 0.0, || "window_s must be positive".into())?;
    ensure(hop_s > 0.0 && hop_s <= window_s, || {
        format!("need 0 < hop_s <= window_s, got hop_s={hop_s} window_s={window_s}")
    })?;
    let fps = m.params.frames_per_second();
    let n = ((window_s * fps).round() as usize).max(1);
    let h = ((hop_s * fps).round() as usize).max(1);
    let frames = m.n_frames();
    ensure(n <= frames, || {
        format!("window of {window_s} s ({n} frames) is longer than the recording ({frames} frames)")
    })?;
    let count = if n == frames { 1 } else { frames.div_ceil(h) };
    Ok((0..count)
        .map(|i| MelSpectrogram {
            values: edge_padded_columns(&m.values, i * h, n),
            params: m.params,
            normalized: m.normalized,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats<T> {
    pub mean: Array1<T>,
    pub std: Array1<T>,
}

/// Per-dimension mean and population standard deviation over every vector.
pub fn fit_stats<T: Scalar>(train: &[FeatureSequence<T>]) -> Result<FeatureStats<T>> {
    let total: usize = train.iter().map(|s| s.len()).sum();
    ensure(total >= 2, || format!("fit_stats needs at least 2 vectors, got {total}"))?;
    let dim = train[0].dim();
    for s in train {
        if s.dim() != dim {
            return Err(AsdError::DimensionMismatch {
                expected: dim,
                got: s.dim(),
            });
        }
    }
    let count = T::from_usize_lossy(total);
    let mut mean = Array1::<T>::zeros(dim);
    for s in train {
        for row in s.vectors.rows() {
            mean += &row;
        }
    }
    mean /= count;
    let mut var = Array1::<T>::zeros(dim);
    for s in train {
        for row in s.vectors.rows() {
            let d = &row - &mean;
            var += &(&d * &d);
        }
    }
    var /= count;
    let floor = T::lit(STD_FLOOR);
    let std = var.mapv(|v| v.sqrt().max(floor));
    Ok(FeatureStats { mean, std })
}

pub fn standardize<T: Scalar>(x: &FeatureSequence<T>, s: &FeatureStats<T>) -> Result<FeatureSequence<T>> {
    if x.dim() != s.mean.len() {
        return Err(AsdError::DimensionMismatch {
            expected: s.mean.len(),
            got: x.dim(),
        });
    }
    let mut v = x.vectors.clone();
    for mut row in v.rows_mut() {
        row -= &s.mean;
        row /= &s.std;
    }
    Ok(x.map_vectors(v))
}

/// Stacks the vectors of several sequences into one matrix.
pub fn stack_vectors<T: Scalar>(seqs: &[FeatureSequence<T>]) -> Result<Array2<T>> {
    ensure(!seqs.is_empty(), || "no feature sequences to stack".into())?;
    let views: Vec<_> = seqs.iter().map(|s| s.vectors.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| AsdError::invalid(format!("cannot stack features: {e}")))
}
