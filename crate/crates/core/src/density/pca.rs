use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, AsdError, Result};
use crate::scalar::Scalar;

/// Principal components with orthonormal rows in descending-variance order.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Array1<T>,
    /// `d x D`
    pub components: Array2<T>,
    pub explained_ratio: Array1<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn transform(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if x.len() != self.input_dim() {
            return Err(AsdError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.components.dot(&(&x - &self.mean)))
    }

    /// Projects every row of `x`.
    pub fn transform_batch(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.input_dim() {
            return Err(AsdError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let centered = &x - &self.mean;
        Ok(centered.dot(&self.components.t()))
    }

    /// Maps projected coordinates back to the input space.
    pub fn inverse_transform(&self, z: ArrayView1<'_, T>) -> Array1<T> {
        self.components.t().dot(&z) + &self.mean
    }
}

/// Fits PCA through a thin SVD of the centred data and keeps the fewest
/// components whose cumulative explained variance reaches `retain`.
pub fn pca_fit<T: Scalar>(data: ArrayView2<'_, T>, retain: f64) -> Result<PcaModel<T>> {
    let (n, dim) = data.dim();
    ensure(n >= 2, || format!("PCA needs at least 2 samples, got {n}"))?;
    ensure(dim >= 1, || "PCA needs at least one dimension".into())?;
    ensure(retain > 0.0 && retain <= 1.0, || format!("retain must lie in (0, 1], got {retain}"))?;
    let mean = data.mean_axis(Axis(0)).expect("n >= 2");
    let centered = DMatrix::<f64>::from_fn(n, dim, |r, c| (data[[r, c]] - mean[c]).as_f64());
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let variances: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = variances.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(AsdError::invalid("PCA input has zero variance (rank 0)"));
    }
    let mut keep = 0;
    let mut cum = 0.0;
    for v in &variances {
        cum += v / total;
        keep += 1;
        if cum >= retain - 1e-12 {
            break;
        }
    }
    let components = Array2::from_shape_fn((keep, dim), |(r, c)| T::lit(v_t[(order[r], c)]));
    let explained_ratio = Array1::from_iter(variances[..keep].iter().map(|v| T::lit(v / total)));
    Ok(PcaModel {
        mean,
        components,
        explained_ratio,
    })
}

pub fn pca_transform<T: Scalar>(p: &PcaModel<T>, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
    p.transform(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaDoc {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_ratio: Vec<f64>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn to_doc(&self) -> PcaDoc {
        PcaDoc {
            mean: self.mean.iter().map(|v| v.as_f64()).collect(),
            components: self
                .components
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
            explained_ratio: self.explained_ratio.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_doc(doc: &PcaDoc) -> Result<Self> {
        let dim = doc.mean.len();
        let d = doc.components.len();
        ensure(d >= 1 && doc.components.iter().all(|r| r.len() == dim), || {
            "PCA components do not match the mean dimension".into()
        })?;
        ensure(doc.explained_ratio.len() == d, || "explained_ratio length mismatch".into())?;
        Ok(Self {
            mean: doc.mean.iter().map(|&v| T::lit(v)).collect(),
            components: Array2::from_shape_fn((d, dim), |(r, c)| T::lit(doc.components[r][c])),
            explained_ratio: doc.explained_ratio.iter().map(|&v| T::lit(v)).collect(),
        })
    }
}
