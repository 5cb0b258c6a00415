//! `FVEC` feature-vector files.
//!
//! Layout: the 5 magic bytes `FVEC1`, little-endian `u32` vector count,
//! little-endian `u32` dimension, then `count * dim` little-endian `f32`
//! values in vector order. A JSON sidecar with the same stem describes where
//! the vectors came from.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::error::{AsdError, Result};
use crate::scalar::Scalar;

pub const FVEC_MAGIC: &[u8; 5] = b"FVEC1";
const HEADER_LEN: usize = 5 + 4 + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FvecManifest {
    pub source: String,
    pub extractor_tag: String,
    pub window_s: f64,
    pub hop_s: f64,
}

/// `features/a.fvec` -> `features/a.json`
pub fn fvec_sidecar_path(fvec: &Path) -> PathBuf {
    fvec.with_extension("json")
}

fn format_err(path: &Path, reason: impl Into<String>) -> AsdError {
    AsdError::Format {
        kind: "FVEC",
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn encode_fvec<T: Scalar>(seq: &FeatureSequence<T>) -> Result<Vec<u8>> {
    let count = u32::try_from(seq.len()).map_err(|_| AsdError::invalid("too many vectors for FVEC"))?;
    let dim = u32::try_from(seq.dim()).map_err(|_| AsdError::invalid("dimension too large for FVEC"))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * seq.vectors.len());
    buf.extend_from_slice(FVEC_MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    for v in seq.vectors.iter() {
        let f = v.to_f32().unwrap_or(f32::NAN);
        if !f.is_finite() {
            return Err(AsdError::invalid("FVEC values must be finite f32"));
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_fvec<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Array2<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, format!("file of {} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..5] != FVEC_MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(path, "header sizes overflow"))?;
    if bytes.len() - HEADER_LEN != expected {
        return Err(format_err(
            path,
            format!("expected {expected} payload bytes for {count}x{dim}, found {}", bytes.len() - HEADER_LEN),
        ));
    }
    let mut values = Vec::with_capacity(count * dim);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let f = f32::from_le_bytes(chunk.try_into().unwrap());
        if !f.is_finite() {
            return Err(format_err(path, format!("non-finite value at index {i}")));
        }
        values.push(T::lit(f as f64));
    }
    Array2::from_shape_vec((count, dim), values).map_err(|e| format_err(path, e.to_string()))
}

/// Writes `seq` to `path` and its sidecar manifest next to it.
pub fn write_fvec<T: Scalar>(path: &Path, seq: &FeatureSequence<T>, manifest: &FvecManifest) -> Result<()> {
    let bytes = encode_fvec(seq)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| AsdError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| AsdError::io(path, e))?;
    let side = fvec_sidecar_path(path);
    fs::write(&side, serde_json::to_vec_pretty(manifest)?).map_err(|e| AsdError::io(&side, e))
}

pub fn read_fvec_manifest(path: &Path) -> Result<FvecManifest> {
    let side = fvec_sidecar_path(path);
    let text = fs::read(&side).map_err(|e| AsdError::io(&side, e))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Loads an FVEC file. The sidecar manifest, when present, provides the
/// extractor tag and source id.
pub fn read_fvec<T: Scalar>(path: &Path) -> Result<FeatureSequence<T>> {
    let bytes = fs::read(path).map_err(|e| AsdError::io(path, e))?;
    let vectors = decode_fvec(&bytes, path)?;
    if vectors.nrows() == 0 {
        return Err(format_err(path, "no vectors"));
    }
    let (source, tag) = match read_fvec_manifest(path) {
        Ok(m) => (m.source, m.extractor_tag),
        Err(_) => (path.display().to_string(), "external".to_string()),
    };
    FeatureSequence::new(vectors, source, tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_bit_exact() {
        let seq = FeatureSequence::new(Array2::from_shape_vec((2, 3), vec![1.0f64, 2.0, 3.0, 4.0, 5.0, -0.5]).unwrap(), "a", "t").unwrap();
        let bytes = encode_fvec(&seq).unwrap();
        assert_eq!(&bytes[..5], b"FVEC1");
        assert_eq!(&bytes[5..9], &[2, 0, 0, 0]);
        assert_eq!(&bytes[9..13], &[3, 0, 0, 0]);
        assert_eq!(&bytes[13..17], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[33..37], &(-0.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 13 + 24);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_nan() {
        let p = Path::new("x.fvec");
        let mut bytes = b"FVEC1".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_fvec::<f64>(&bytes, p).is_err());
        bytes.truncate(15);
        assert!(decode_fvec::<f64>(&bytes, p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'G';
        assert!(decode_fvec::<f64>(&bad, p).is_err());
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/rec.fvec");
        let seq = FeatureSequence::new(Array2::from_elem((20, 128), 0.25f32), "rec.wav", "vggish").unwrap();
        let man = FvecManifest {
            source: "rec.wav".into(),
            extractor_tag: "vggish".into(),
            window_s: 1.0,
            hop_s: 0.5,
        };
        write_fvec(&path, &seq, &man).unwrap();
        let back: FeatureSequence<f32> = read_fvec(&path).unwrap();
        assert_eq!(back, seq);
        assert_eq!(read_fvec_manifest(&path).unwrap(), man);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(count in 1usize..8, dim in 1usize..8, seed in any::<u32>()) {
            let vals: Vec<f32> = (0..count * dim).map(|i| ((i as u32).wrapping_mul(seed) % 1000) as f32 / 7.0 - 50.0).collect();
            let seq = FeatureSequence::new(Array2::from_shape_vec((count, dim), vals).unwrap(), "s", "t").unwrap();
            let back: Array2<f32> = decode_fvec(&encode_fvec(&seq).unwrap(), Path::new("p")).unwrap();
            prop_assert_eq!(back, seq.vectors);
        }
    }
}
