use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{ensure, AsdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecording {
    pub recording_id: String,
    pub label: Label,
    pub score: f64,
}

/// Area under the ROC curve from midranks: the probability that a random
/// anomalous score exceeds a random normal one, ties counting one half.
pub fn roc_auc(scored: &[ScoredRecording]) -> Result<f64> {
    if let Some(bad) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(AsdError::Numeric(format!(
            "recording {} has non-finite score {}",
            bad.recording_id, bad.score
        )));
    }
    let n_pos = scored.iter().filter(|s| s.label == Label::Anomalous).count();
    let n_neg = scored.len() - n_pos;
    ensure(n_pos > 0 && n_neg > 0, || {
        format!("AUC needs both labels, got {n_pos} anomalous and {n_neg} normal")
    })?;
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].score.total_cmp(&scored[b].score));
    // sum of 1-based midranks of the anomalous recordings
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].score == scored[order[i]].score {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        let positives = order[i..=j].iter().filter(|&&k| scored[k].label == Label::Anomalous).count();
        rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC from parallel label and score slices.
pub fn roc_auc_from(labels: &[Label], scores: &[f64]) -> Result<f64> {
    ensure(labels.len() == scores.len(), || "labels and scores differ in length".into())?;
    let scored: Vec<ScoredRecording> = labels
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (&label, &score))| ScoredRecording {
            recording_id: i.to_string(),
            label,
            score,
        })
        .collect();
    roc_auc(&scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn auc(normal: &[f64], anomalous: &[f64]) -> f64 {
        let labels: Vec<Label> = normal
            .iter()
            .map(|_| Label::Normal)
            .chain(anomalous.iter().map(|_| Label::Anomalous))
            .collect();
        let scores: Vec<f64> = normal.iter().chain(anomalous).copied().collect();
        roc_auc_from(&labels, &scores).unwrap()
    }

    fn pairwise(normal: &[f64], anomalous: &[f64]) -> f64 {
        let mut wins = 0.0;
        for &a in anomalous {
            for &n in normal {
                wins += if a > n { 1.0 } else if a == n { 0.5 } else { 0.0 };
            }
        }
        wins / (normal.len() * anomalous.len()) as f64
    }

    #[test]
    fn anchors() {
        assert_eq!(auc(&[0.1, 0.2], &[0.3, 0.4]), 1.0);
        assert_eq!(auc(&[0.5; 4], &[0.5; 3]), 0.5);
        assert_eq!(auc(&[1.0, 2.0], &[2.0, 3.0]), 0.875);
        assert_eq!(auc(&[0.3, 0.4], &[0.1, 0.2]), 0.0);
    }

    #[test]
    fn rejects_single_class_and_nan() {
        assert!(roc_auc_from(&[Label::Normal; 3], &[0.1, 0.2, 0.3]).is_err());
        assert!(roc_auc_from(&[Label::Normal, Label::Anomalous], &[0.1, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(
            normal in proptest::collection::vec(0u8..20, 1..60),
            anomalous in proptest::collection::vec(0u8..20, 1..60),
        ) {
            let n: Vec<f64> = normal.iter().map(|&v| v as f64 / 4.0).collect();
            let a: Vec<f64> = anomalous.iter().map(|&v| v as f64 / 4.0).collect();
            prop_assert_eq!(auc(&n, &a), pairwise(&n, &a));
            // strictly increasing transform
            let tn: Vec<f64> = n.iter().map(|v| (v * 3.0).exp() - 7.0).collect();
            let ta: Vec<f64> = a.iter().map(|v| (v * 3.0).exp() - 7.0).collect();
            prop_assert_eq!(auc(&tn, &ta), auc(&n, &a));
            // negation complements
            let nn: Vec<f64> = n.iter().map(|v| -v).collect();
            let na: Vec<f64> = a.iter().map(|v| -v).collect();
            prop_assert!((auc(&nn, &na) - (1.0 - auc(&n, &a))).abs() < 1e-12);
        }
    }
}
