use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Label, RecordingMeta};
use crate::error::{ensure, Result};

/// Indices into the recordings a split was drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSplit {
    /// Normal recordings only.
    pub train: Vec<usize>,
    /// Every anomalous recording plus as many sampled normal ones.
    pub test: Vec<usize>,
    pub seed: u64,
}

impl EvalSplit {
    pub fn train_ids<'a>(&self, recordings: &'a [RecordingMeta]) -> Vec<&'a str> {
        self.train.iter().map(|&i| recordings[i].recording_id.as_str()).collect()
    }

    pub fn test_ids<'a>(&self, recordings: &'a [RecordingMeta]) -> Vec<&'a str> {
        self.test.iter().map(|&i| recordings[i].recording_id.as_str()).collect()
    }
}

/// Balanced test set: all anomalies and an equal number of normals drawn
/// uniformly without replacement. The remaining normals form the training set.
pub fn make_split(recordings: &[RecordingMeta], seed: u64) -> Result<EvalSplit> {
    let normals: Vec<usize> = (0..recordings.len()).filter(|&i| recordings[i].label == Label::Normal).collect();
    let anomalies: Vec<usize> = (0..recordings.len()).filter(|&i| recordings[i].label == Label::Anomalous).collect();
    ensure(anomalies.len() >= 2, || format!("need at least 2 anomalous recordings, got {}", anomalies.len()))?;
    ensure(normals.len() >= 2 * anomalies.len(), || {
        format!(
            "need at least {} normal recordings for {} anomalous, got {}",
            2 * anomalies.len(),
            anomalies.len(),
            normals.len()
        )
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, normals.len(), anomalies.len()).into_vec();
    picked.sort_unstable();
    let mut in_test = vec![false; normals.len()];
    for &p in &picked {
        in_test[p] = true;
    }
    let train = normals.iter().zip(&in_test).filter(|(_, &t)| !t).map(|(&i, _)| i).collect();
    let mut test: Vec<usize> = picked.iter().map(|&p| normals[p]).chain(anomalies).collect();
    test.sort_unstable();
    Ok(EvalSplit { train, test, seed })
}
