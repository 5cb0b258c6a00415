//! Density estimation over feature vectors: optional standardization and
//! PCA followed by a Gaussian mixture, plus recording-level pooling of the
//! per-vector negative log-likelihoods.

mod gmm;
mod pca;

pub use gmm::{
    gmm_fit_em, gmm_nll, log_sum_exp, CovType, Covariances, GmmConfig, GmmDoc, GmmFit, GmmModel, ReseedEvent,
    DEGENERATE_WEIGHT, INIT_SUBSAMPLE,
};
pub use pca::{pca_fit, pca_transform, PcaDoc, PcaModel};

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, AsdError, Result};
use crate::featurize::{fit_stats, stack_vectors, standardize, FeatureSequence, FeatureStats};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Sum,
}

/// Pools per-vector NLLs into one recording score.
pub fn pool<T: Scalar>(nll: &Array1<T>, pooling: Pooling) -> Result<T> {
    ensure(!nll.is_empty(), || "cannot pool an empty sequence".into())?;
    let total = nll.sum();
    Ok(match pooling {
        Pooling::Sum => total,
        Pooling::Mean => total / T::from_usize_lossy(nll.len()),
    })
}

pub fn score_sequence<T: Scalar>(g: &GmmModel<T>, x: &FeatureSequence<T>, pooling: Pooling) -> Result<T> {
    ensure(!x.is_empty(), || "cannot score an empty feature sequence".into())?;
    pool(&g.nll_batch(x.vectors.view())?, pooling)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    pub gmm: GmmConfig,
    /// Per-dimension standardization with training statistics.
    pub standardize: bool,
    /// Fraction of variance kept by PCA; `None` disables it.
    pub pca_retain: Option<f64>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            gmm: GmmConfig::default(),
            standardize: true,
            pca_retain: None,
        }
    }
}

/// A fitted scoring pipeline for feature sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel<T> {
    pub stats: Option<FeatureStats<T>>,
    pub pca: Option<PcaModel<T>>,
    pub gmm: GmmModel<T>,
    pub config: DensityConfig,
}

/// Fit summary kept alongside the model.
#[derive(Debug, Clone)]
pub struct DensityFit<T> {
    pub model: DensityModel<T>,
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    pub reseeds: Vec<ReseedEvent>,
}

impl<T: Scalar> DensityModel<T> {
    pub fn fit(train: &[FeatureSequence<T>], config: &DensityConfig) -> Result<DensityFit<T>> {
        ensure(!train.is_empty(), || "no training sequences".into())?;
        let stats = if config.standardize { Some(fit_stats(train)?) } else { None };
        let mut data = match &stats {
            Some(s) => stack_vectors(&train.iter().map(|x| standardize(x, s)).collect::<Result<Vec<_>>>()?)?,
            None => stack_vectors(train)?,
        };
        let pca = match config.pca_retain {
            Some(retain) => {
                let p = pca_fit(data.view(), retain)?;
                data = p.transform_batch(data.view())?;
                Some(p)
            }
            None => None,
        };
        let fit = gmm_fit_em(data.view(), &config.gmm)?;
        Ok(DensityFit {
            model: DensityModel {
                stats,
                pca,
                gmm: fit.model,
                config: *config,
            },
            log_likelihood: fit.log_likelihood,
            converged: fit.converged,
            reseeds: fit.reseeds,
        })
    }

    pub fn input_dim(&self) -> usize {
        match (&self.stats, &self.pca) {
            (Some(s), _) => s.mean.len(),
            (None, Some(p)) => p.input_dim(),
            (None, None) => self.gmm.dim(),
        }
    }

    /// NLL of every row after the fitted preprocessing.
    pub fn nll_batch(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        if x.ncols() != self.input_dim() {
            return Err(AsdError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut v = x.to_owned();
        if let Some(s) = &self.stats {
            for mut row in v.rows_mut() {
                row -= &s.mean;
                row /= &s.std;
            }
        }
        if let Some(p) = &self.pca {
            v = p.transform_batch(v.view())?;
        }
        self.gmm.nll_batch(v.view())
    }

    pub fn score(&self, x: &FeatureSequence<T>, pooling: Pooling) -> Result<T> {
        ensure(!x.is_empty(), || "cannot score an empty feature sequence".into())?;
        pool(&self.nll_batch(x.vectors.view())?, pooling)
    }

    pub fn to_doc(&self) -> DensityDoc {
        let g = self.gmm.to_doc();
        DensityDoc {
            cov_type: g.cov_type,
            k: g.k,
            d: g.d,
            weights: g.weights,
            means: g.means,
            covariances: g.covariances,
            pca: self.pca.as_ref().map(PcaModel::to_doc),
            standardization: self.stats.as_ref().map(|s| StatsDoc {
                mean: s.mean.iter().map(|v| v.as_f64()).collect(),
                std: s.std.iter().map(|v| v.as_f64()).collect(),
            }),
            seed: self.config.gmm.seed,
            config: self.config,
        }
    }

    pub fn from_doc(doc: &DensityDoc) -> Result<Self> {
        let gmm = GmmModel::from_doc(&GmmDoc {
            cov_type: doc.cov_type,
            k: doc.k,
            d: doc.d,
            weights: doc.weights.clone(),
            means: doc.means.clone(),
            covariances: doc.covariances.clone(),
        })?;
        let pca = doc.pca.as_ref().map(PcaModel::from_doc).transpose()?;
        let stats = match &doc.standardization {
            Some(s) => {
                ensure(s.mean.len() == s.std.len() && s.std.iter().all(|&v| v > 0.0), || {
                    "invalid standardization statistics".into()
                })?;
                Some(FeatureStats {
                    mean: s.mean.iter().map(|&v| T::lit(v)).collect(),
                    std: s.std.iter().map(|&v| T::lit(v)).collect(),
                })
            }
            None => None,
        };
        let inner = pca.as_ref().map_or(gmm.dim(), |p| p.output_dim());
        ensure(inner == gmm.dim(), || "PCA output does not match the mixture dimension".into())?;
        if let (Some(s), Some(p)) = (&stats, &pca) {
            ensure(s.mean.len() == p.input_dim(), || "standardization does not match PCA input".into())?;
        }
        if let (Some(s), None) = (&stats, &pca) {
            ensure(s.mean.len() == gmm.dim(), || "standardization does not match the mixture dimension".into())?;
        }
        Ok(Self {
            stats,
            pca,
            gmm,
            config: doc.config,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDoc {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityDoc {
    pub cov_type: CovType,
    pub k: usize,
    pub d: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: serde_json::Value,
    pub pca: Option<PcaDoc>,
    pub standardization: Option<StatsDoc>,
    pub seed: u64,
    pub config: DensityConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array2, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> GmmModel<f64> {
        GmmModel::new(
            Array1::ones(1),
            Array2::zeros((1, 2)),
            Covariances::Diagonal(Array2::ones((1, 2))),
        )
        .unwrap()
    }

    fn seq(v: Array2<f64>) -> FeatureSequence<f64> {
        FeatureSequence::new(v, "r", "test").unwrap()
    }

    #[test]
    fn single_vector_is_pooling_invariant() {
        let g = unit();
        let x = seq(Array2::from_shape_vec((1, 2), vec![0.4, -0.7]).unwrap());
        let mean = score_sequence(&g, &x, Pooling::Mean).unwrap();
        let sum = score_sequence(&g, &x, Pooling::Sum).unwrap();
        assert_eq!(mean, sum);
        assert_abs_diff_eq!(mean, gmm_nll(&g, x.vector(0)).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn constant_columns_mean_to_column_nll() {
        let g = unit();
        let x = seq(Array2::from_shape_fn((6, 2), |(_, j)| j as f64 + 0.5));
        let mean = score_sequence(&g, &x, Pooling::Mean).unwrap();
        assert_abs_diff_eq!(mean, gmm_nll(&g, x.vector(0)).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn sum_is_count_times_mean_and_ranks_agree() {
        let g = unit();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pairs = Vec::new();
        for _ in 0..50 {
            let x = seq(Array2::from_shape_simple_fn((9, 2), || rng.random_range(-3.0..3.0)));
            let mean = score_sequence(&g, &x, Pooling::Mean).unwrap();
            let sum = score_sequence(&g, &x, Pooling::Sum).unwrap();
            assert_abs_diff_eq!(sum, 9.0 * mean, epsilon = 1e-9);
            pairs.push((mean, sum));
        }
        let rank = |key: fn(&(f64, f64)) -> f64| {
            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            idx.sort_by(|&a, &b| key(&pairs[a]).total_cmp(&key(&pairs[b])));
            idx
        };
        assert_eq!(rank(|p| p.0), rank(|p| p.1));
    }

    #[test]
    fn empty_pool_is_rejected() {
        assert!(pool(&Array1::<f64>::zeros(0), Pooling::Mean).is_err());
    }

    #[test]
    fn pipeline_round_trips_through_json() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let train: Vec<_> = (0..4)
            .map(|_| seq(Array2::from_shape_fn((50, 6), |(_, j)| (j as f64 + 1.0) * rng.random_range(-1.0..1.0))))
            .collect();
        for (pca_retain, cov_type) in [(None, CovType::Diagonal), (Some(0.9), CovType::Full)] {
            let cfg = DensityConfig {
                gmm: GmmConfig { k: 3, cov_type, ..Default::default() },
                pca_retain,
                ..Default::default()
            };
            let model = DensityModel::fit(&train, &cfg).unwrap().model;
            let text = serde_json::to_string(&model.to_doc()).unwrap();
            let back = DensityModel::<f64>::from_doc(&serde_json::from_str(&text).unwrap()).unwrap();
            assert_eq!(back, model);
            let s = model.score(&train[0], Pooling::Mean).unwrap();
            assert!(s.is_finite());
            assert_eq!(s, back.score(&train[0], Pooling::Mean).unwrap());
        }
    }

    #[test]
    fn pca_preserves_distances_within_discarded_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scales = [4.0, 2.0, 1.0, 0.1, 0.05];
        let data = Array2::from_shape_fn((1000, 5), |(_, c)| scales[c] * rng.random_range(-1.0..1.0));
        let p = pca_fit(data.view(), 0.98).unwrap();
        let z = p.transform_batch(data.view()).unwrap();
        let (mut orig, mut proj) = (0.0, 0.0);
        for _ in 0..2000 {
            let (a, b) = (rng.random_range(0..1000), rng.random_range(0..1000));
            let d = &data.index_axis(Axis(0), a) - &data.index_axis(Axis(0), b);
            let e = &z.index_axis(Axis(0), a) - &z.index_axis(Axis(0), b);
            let (dd, ee) = (d.dot(&d), e.dot(&e));
            // projection never stretches
            assert!(ee <= dd + 1e-9);
            orig += dd;
            proj += ee;
        }
        // mean squared pair distance is twice the total variance
        assert!(1.0 - proj / orig <= 0.02 + 0.01, "lost {}", 1.0 - proj / orig);
    }
}
