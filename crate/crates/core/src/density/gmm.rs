//! Gaussian mixture models fitted by expectation-maximization.
//!
//! Variances are kept at or above `reg`: diagonal entries are clamped, full
//! covariances have their eigenvalues clamped. Both are the constrained
//! maximizers of the M-step objective, so the log-likelihood trace stays
//! monotone.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, AsdError, Result};
use crate::scalar::Scalar;
use crate::seed::mix_seed;

/// Components whose weight falls below this are re-seeded.
pub const DEGENERATE_WEIGHT: f64 = 1e-12;
/// Upper bound on the number of vectors used for k-means++ seeding.
pub const INIT_SUBSAMPLE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovType {
    Diagonal,
    Full,
}

impl CovType {
    pub fn as_str(self) -> &'static str {
        match self {
            CovType::Diagonal => "diagonal",
            CovType::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub k: usize,
    pub cov_type: CovType,
    pub max_iters: usize,
    /// Relative change of the mean log-likelihood that counts as converged.
    pub tol: f64,
    /// Variance floor.
    pub reg: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 20,
            cov_type: CovType::Diagonal,
            max_iters: 200,
            tol: 1e-4,
            reg: 1e-6,
            seed: 0,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.k >= 1, || "k must be >= 1".into())?;
        ensure(self.tol > 0.0, || "tol must be positive".into())?;
        ensure(self.reg > 0.0, || "reg must be positive".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariances<T> {
    /// `K x d` variances.
    Diagonal(Array2<T>),
    /// `K` symmetric positive-definite `d x d` matrices.
    Full(Vec<Array2<T>>),
}

/// Per-component quantities needed to evaluate log densities.
#[derive(Debug, Clone, PartialEq)]
enum Precision<T> {
    /// Inverse variances, `K x d`.
    Diagonal(Array2<T>),
    /// Inverse lower Cholesky factors, one per component.
    Full(Vec<Array2<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel<T> {
    weights: Array1<T>,
    means: Array2<T>,
    covariances: Covariances<T>,
    precision: Precision<T>,
    /// `ln(lambda_k) - 0.5 * (d ln 2pi + ln |Sigma_k|)`
    log_norm: Array1<T>,
}

/// Component re-seeded during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReseedEvent {
    pub iteration: usize,
    pub component: usize,
}

#[derive(Debug, Clone)]
pub struct GmmFit<T> {
    pub model: GmmModel<T>,
    /// Mean log-likelihood per sample, one entry per E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reseeds: Vec<ReseedEvent>,
}

fn cholesky<T: Scalar>(a: &Array2<T>) -> Option<Array2<T>> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(sum > T::zero()) || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

fn lower_inverse<T: Scalar>(l: &Array2<T>) -> Array2<T> {
    let n = l.nrows();
    let mut inv = Array2::<T>::zeros((n, n));
    for col in 0..n {
        inv[[col, col]] = T::one() / l[[col, col]];
        for i in col + 1..n {
            let mut sum = T::zero();
            for k in col..i {
                sum += l[[i, k]] * inv[[k, col]];
            }
            inv[[i, col]] = -sum / l[[i, i]];
        }
    }
    inv
}

/// Nearest matrix (in the M-step sense) whose eigenvalues are all `>= reg`.
fn floor_eigenvalues<T: Scalar>(s: &Array2<T>, reg: f64) -> Array2<T> {
    let d = s.nrows();
    let shifted = Array2::from_shape_fn((d, d), |(i, j)| {
        if i == j {
            s[[i, j]] - T::lit(reg)
        } else {
            s[[i, j]]
        }
    });
    if cholesky(&shifted).is_some() {
        return s.clone();
    }
    let m = DMatrix::<f64>::from_fn(d, d, |i, j| 0.5 * (s[[i, j]] + s[[j, i]]).as_f64());
    let eig = SymmetricEigen::new(m);
    let vals = eig.eigenvalues.map(|v| v.max(reg));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&vals) * v.transpose();
    Array2::from_shape_fn((d, d), |(i, j)| T::lit(0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)])))
}

impl<T: Scalar> GmmModel<T> {
    /// Builds a model, validating weights and covariances.
    pub fn new(weights: Array1<T>, means: Array2<T>, covariances: Covariances<T>) -> Result<Self> {
        let (k, d) = means.dim();
        ensure(k >= 1 && d >= 1, || "GMM needs at least one component and dimension".into())?;
        ensure(weights.len() == k, || format!("{} weights for {k} components", weights.len()))?;
        ensure(weights.iter().all(|&w| w > T::zero() && w.is_finite()), || {
            "mixture weights must be positive".into()
        })?;
        let total: T = weights.sum();
        ensure((total - T::one()).abs() < T::lit(1e-6), || format!("mixture weights sum to {total}"))?;
        ensure(means.iter().all(|v| v.is_finite()), || "non-finite component mean".into())?;
        let half = T::lit(0.5);
        let dlog2pi = T::from_usize_lossy(d) * T::lit((2.0 * std::f64::consts::PI).ln());
        let (precision, log_det) = match &covariances {
            Covariances::Diagonal(var) => {
                ensure(var.dim() == (k, d), || "diagonal covariance shape mismatch".into())?;
                ensure(var.iter().all(|&v| v > T::zero() && v.is_finite()), || {
                    "variances must be positive".into()
                })?;
                let log_det = var.map_axis(Axis(1), |row| row.iter().map(|v| v.ln()).sum::<T>());
                (Precision::Diagonal(var.mapv(|v| T::one() / v)), log_det)
            }
            Covariances::Full(covs) => {
                ensure(covs.len() == k && covs.iter().all(|c| c.dim() == (d, d)), || {
                    "full covariance shape mismatch".into()
                })?;
                let mut inv = Vec::with_capacity(k);
                let mut log_det = Array1::zeros(k);
                for (i, c) in covs.iter().enumerate() {
                    let l = cholesky(c).ok_or_else(|| {
                        AsdError::Numeric(format!("covariance of component {i} is not positive definite"))
                    })?;
                    log_det[i] = T::lit(2.0) * l.diag().iter().map(|v| v.ln()).sum::<T>();
                    inv.push(lower_inverse(&l));
                }
                (Precision::Full(inv), log_det)
            }
        };
        let log_norm = Zip::from(&weights)
            .and(&log_det)
            .map_collect(|&w, &ld| w.ln() - half * (dlog2pi + ld));
        Ok(Self {
            weights,
            means,
            covariances,
            precision,
            log_norm,
        })
    }

    pub fn k(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &Array1<T> {
        &self.weights
    }

    pub fn means(&self) -> &Array2<T> {
        &self.means
    }

    pub fn covariances(&self) -> &Covariances<T> {
        &self.covariances
    }

    pub fn cov_type(&self) -> CovType {
        match self.covariances {
            Covariances::Diagonal(_) => CovType::Diagonal,
            Covariances::Full(_) => CovType::Full,
        }
    }

    /// `ln(lambda_k N(x_n | mu_k, Sigma_k))` for every row `n` and component `k`.
    pub fn weighted_log_densities(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let (n, k) = (x.nrows(), self.k());
        let half = T::lit(0.5);
        let mut out = Array2::<T>::zeros((n, k));
        match &self.precision {
            Precision::Diagonal(prec) => {
                out.axis_iter_mut(Axis(0))
                    .into_par_iter()
                    .zip(x.axis_iter(Axis(0)).into_par_iter())
                    .for_each(|(mut row, xi)| {
                        for c in 0..k {
                            let mu = self.means.row(c);
                            let p = prec.row(c);
                            let mut maha = T::zero();
                            for j in 0..xi.len() {
                                let diff = xi[j] - mu[j];
                                maha += diff * diff * p[j];
                            }
                            row[c] = self.log_norm[c] - half * maha;
                        }
                    });
            }
            Precision::Full(inv) => {
                let cols: Vec<Array1<T>> = (0..k)
                    .into_par_iter()
                    .map(|c| {
                        let centered = &x - &self.means.row(c);
                        let z = centered.dot(&inv[c].t());
                        z.map_axis(Axis(1), |r| self.log_norm[c] - half * r.dot(&r))
                    })
                    .collect();
                for (c, col) in cols.into_iter().enumerate() {
                    out.column_mut(c).assign(&col);
                }
            }
        }
        out
    }

    /// Negative log-likelihood of every row of `x`.
    pub fn nll_batch(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        if x.ncols() != self.dim() {
            return Err(AsdError::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AsdError::invalid("non-finite feature vector"));
        }
        let logp = self.weighted_log_densities(x);
        Ok(logp.map_axis(Axis(1), |r| -log_sum_exp(r)))
    }

    /// Posterior component probabilities, one row per sample.
    pub fn responsibilities(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.dim() {
            return Err(AsdError::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let mut logp = self.weighted_log_densities(x);
        for mut row in logp.rows_mut() {
            let l = log_sum_exp(row.view());
            row.mapv_inplace(|v| (v - l).exp());
        }
        Ok(logp)
    }

    pub fn nll(&self, x: ArrayView1<'_, T>) -> Result<T> {
        Ok(self.nll_batch(x.insert_axis(Axis(0)))?[0])
    }
}

pub fn log_sum_exp<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    let m = v.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// `-ln sum_k lambda_k N(x | mu_k, Sigma_k)`
pub fn gmm_nll<T: Scalar>(g: &GmmModel<T>, x: ArrayView1<'_, T>) -> Result<T> {
    g.nll(x)
}

/// k-means++ seeding on a subsample, returning `k` centre rows.
fn kmeans_pp<T: Scalar>(x: ArrayView2<'_, T>, k: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let n = x.nrows();
    let sample: Vec<usize> = if n > INIT_SUBSAMPLE {
        rand::seq::index::sample(rng, n, INIT_SUBSAMPLE).into_vec()
    } else {
        (0..n).collect()
    };
    let sq_dist = |a: ArrayView1<'_, T>, b: ArrayView1<'_, T>| -> f64 {
        a.iter().zip(b.iter()).map(|(&u, &v)| ((u - v) * (u - v)).as_f64()).sum()
    };
    let mut centers = Array2::<T>::zeros((k, x.ncols()));
    let first = sample[rng.random_range(0..sample.len())];
    centers.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = sample.iter().map(|&i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..sample.len())
        };
        let row = sample[pick];
        centers.row_mut(c).assign(&x.row(row));
        for (d, &i) in d2.iter_mut().zip(&sample) {
            *d = d.min(sq_dist(x.row(i), x.row(row)));
        }
    }
    centers
}

/// Hard assignment of every row to its nearest centre, with the squared distance.
fn assign<T: Scalar>(x: ArrayView2<'_, T>, centers: &Array2<T>) -> Vec<(usize, f64)> {
    x.axis_iter(Axis(0))
        .into_par_iter()
        .map(|row| {
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.rows().into_iter().enumerate() {
                let d: f64 = row.iter().zip(center.iter()).map(|(&a, &b)| ((a - b) * (a - b)).as_f64()).sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

struct Fitter<'a, T> {
    x: ArrayView2<'a, T>,
    cfg: GmmConfig,
    /// Floored per-dimension variance (or covariance) of all data, used for re-seeding.
    global_diag: Array1<T>,
    global_full: Option<Array2<T>>,
}

impl<'a, T: Scalar> Fitter<'a, T> {
    fn new(x: ArrayView2<'a, T>, cfg: GmmConfig) -> Self {
        let n = T::from_usize_lossy(x.nrows());
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = &x - &mean;
        let reg = T::lit(cfg.reg);
        let global_diag = centered.map_axis(Axis(0), |c| (c.dot(&c) / n).max(reg));
        let global_full = match cfg.cov_type {
            CovType::Diagonal => None,
            CovType::Full => Some(floor_eigenvalues(&(centered.t().dot(&centered) / n), cfg.reg)),
        };
        Self {
            x,
            cfg,
            global_diag,
            global_full,
        }
    }

    /// Weighted M-step. `worst` orders samples from least to best explained
    /// and provides re-seed locations for empty components.
    fn m_step(&self, resp: &Array2<T>, worst: &[usize], iteration: usize, reseeds: &mut Vec<ReseedEvent>) -> Result<GmmModel<T>> {
        let (n, d) = self.x.dim();
        let k = self.cfg.k;
        let nk = resp.sum_axis(Axis(0));
        let floor = T::lit(DEGENERATE_WEIGHT) * T::from_usize_lossy(n);
        let reg = T::lit(self.cfg.reg);
        let mut next_worst = worst.iter();
        let comps: Vec<Option<(Array1<T>, CovPart<T>)>> = (0..k)
            .into_par_iter()
            .map(|c| {
                if !(nk[c] > floor) {
                    return None;
                }
                let r = resp.column(c);
                let mean = r.dot(&self.x) / nk[c];
                let centered = &self.x - &mean;
                let cov = match self.cfg.cov_type {
                    CovType::Diagonal => {
                        let mut var = Array1::<T>::zeros(d);
                        for (row, &w) in centered.rows().into_iter().zip(r.iter()) {
                            Zip::from(&mut var).and(&row).for_each(|v, &e| *v += w * e * e);
                        }
                        CovPart::Diag(var.mapv(|v| (v / nk[c]).max(reg)))
                    }
                    CovType::Full => {
                        let weighted = &centered * &r.mapv(|w| w.sqrt()).insert_axis(Axis(1));
                        let s = weighted.t().dot(&weighted) / nk[c];
                        CovPart::Full(floor_eigenvalues(&s, self.cfg.reg))
                    }
                };
                Some((mean, cov))
            })
            .collect();

        let mut weights = Array1::<T>::zeros(k);
        let mut means = Array2::<T>::zeros((k, d));
        let mut diag = Array2::<T>::zeros((k, d));
        let mut full = Vec::with_capacity(k);
        for (c, comp) in comps.into_iter().enumerate() {
            match comp {
                Some((mean, cov)) => {
                    weights[c] = nk[c] / T::from_usize_lossy(n);
                    means.row_mut(c).assign(&mean);
                    match cov {
                        CovPart::Diag(v) => diag.row_mut(c).assign(&v),
                        CovPart::Full(m) => full.push(m),
                    }
                }
                None => {
                    let at = *next_worst.next().unwrap_or(&0);
                    warn!("GMM component {c} degenerate at iteration {iteration}; re-seeding at sample {at}");
                    reseeds.push(ReseedEvent { iteration, component: c });
                    weights[c] = T::one() / T::from_usize_lossy(n);
                    means.row_mut(c).assign(&self.x.row(at));
                    match &self.global_full {
                        Some(g) => full.push(g.clone()),
                        None => diag.row_mut(c).assign(&self.global_diag),
                    }
                }
            }
        }
        let total = weights.sum();
        weights /= total;
        let covariances = match self.cfg.cov_type {
            CovType::Diagonal => Covariances::Diagonal(diag),
            CovType::Full => Covariances::Full(full),
        };
        GmmModel::new(weights, means, covariances)
    }
}

enum CovPart<T> {
    Diag(Array1<T>),
    Full(Array2<T>),
}

/// Indices sorted by ascending score, ties broken by index.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Expectation-maximization with k-means++ initialization.
pub fn gmm_fit_em<T: Scalar>(data: ArrayView2<'_, T>, cfg: &GmmConfig) -> Result<GmmFit<T>> {
    cfg.validate()?;
    let (n, d) = data.dim();
    ensure(d >= 1, || "GMM data has no dimensions".into())?;
    ensure(n >= cfg.k, || format!("GMM with k={} needs at least {} samples, got {n}", cfg.k, cfg.k))?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(AsdError::invalid("GMM data contains non-finite values"));
    }
    let data = data.as_standard_layout();
    let x = data.view();
    let fitter = Fitter::new(x, *cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "gmm-init"));
    let centers = kmeans_pp(x, cfg.k, &mut rng);
    let assignment = assign(x, &centers);
    let mut resp = Array2::<T>::zeros((n, cfg.k));
    for (i, &(c, _)) in assignment.iter().enumerate() {
        resp[[i, c]] = T::one();
    }
    // farthest points first
    let far: Vec<f64> = assignment.iter().map(|&(_, dist)| -dist).collect();
    let mut reseeds = Vec::new();
    let mut model = fitter.m_step(&resp, &ascending(&far), 0, &mut reseeds)?;

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut logp = model.weighted_log_densities(x);
        let lse: Vec<T> = logp.axis_iter(Axis(0)).into_par_iter().map(log_sum_exp).collect();
        let ll = lse.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        if !ll.is_finite() {
            return Err(AsdError::Numeric(format!("GMM log-likelihood became {ll} at iteration {iterations}")));
        }
        if let Some(&prev) = trace.last() {
            let change: f64 = ll - prev;
            if change.abs() <= cfg.tol * f64::abs(prev).max(f64::MIN_POSITIVE) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iterations >= cfg.max_iters {
            break;
        }
        Zip::from(logp.rows_mut()).and(&lse).into_par_iter().for_each(|(mut row, &l)| {
            row.mapv_inplace(|v| (v - l).exp());
        });
        let resp = logp;
        iterations += 1;
        let worst = ascending(&lse.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
        model = fitter.m_step(&resp, &worst, iterations, &mut reseeds)?;
    }
    Ok(GmmFit {
        model,
        log_likelihood: trace,
        iterations,
        converged,
        reseeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDoc {
    pub cov_type: CovType,
    pub k: usize,
    pub d: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// `K x d` variances for diagonal models, `K x d x d` matrices for full ones.
    pub covariances: serde_json::Value,
}

fn rows_f64<T: Scalar>(a: &Array2<T>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
}

fn array2_from<T: Scalar>(rows: &[Vec<f64>], shape: (usize, usize)) -> Result<Array2<T>> {
    ensure(rows.len() == shape.0 && rows.iter().all(|r| r.len() == shape.1), || {
        format!("expected a {}x{} matrix", shape.0, shape.1)
    })?;
    Ok(Array2::from_shape_fn(shape, |(i, j)| T::lit(rows[i][j])))
}

impl<T: Scalar> GmmModel<T> {
    pub fn to_doc(&self) -> GmmDoc {
        let covariances = match &self.covariances {
            Covariances::Diagonal(v) => serde_json::to_value(rows_f64(v)),
            Covariances::Full(m) => serde_json::to_value(m.iter().map(rows_f64).collect::<Vec<_>>()),
        }
        .expect("plain numbers serialize");
        GmmDoc {
            cov_type: self.cov_type(),
            k: self.k(),
            d: self.dim(),
            weights: self.weights.iter().map(|v| v.as_f64()).collect(),
            means: rows_f64(&self.means),
            covariances,
        }
    }

    pub fn from_doc(doc: &GmmDoc) -> Result<Self> {
        let (k, d) = (doc.k, doc.d);
        let means = array2_from(&doc.means, (k, d))?;
        let covariances = match doc.cov_type {
            CovType::Diagonal => {
                let rows: Vec<Vec<f64>> = serde_json::from_value(doc.covariances.clone())?;
                Covariances::Diagonal(array2_from(&rows, (k, d))?)
            }
            CovType::Full => {
                let mats: Vec<Vec<Vec<f64>>> = serde_json::from_value(doc.covariances.clone())?;
                ensure(mats.len() == k, || "wrong number of covariance matrices".into())?;
                Covariances::Full(mats.iter().map(|m| array2_from(m, (d, d))).collect::<Result<_>>()?)
            }
        };
        GmmModel::new(doc.weights.iter().map(|&w| T::lit(w)).collect(), means, covariances)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn standard(k: usize, d: usize) -> GmmModel<f64> {
        GmmModel::new(
            Array1::from_elem(k, 1.0 / k as f64),
            Array2::zeros((k, d)),
            Covariances::Diagonal(Array2::ones((k, d))),
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_at_mean() {
        let g = standard(1, 2);
        let nll = g.nll(Array1::zeros(2).view()).unwrap();
        assert_abs_diff_eq!(nll, (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-9);
    }

    #[test]
    fn identical_components_collapse() {
        let x = Array1::from_vec(vec![0.3, -1.2]);
        let a = standard(1, 2).nll(x.view()).unwrap();
        let b = standard(2, 2).nll(x.view()).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    fn random_model(rng: &mut ChaCha8Rng, k: usize, d: usize, full: bool) -> GmmModel<f64> {
        let mut w: Array1<f64> = Array1::from_shape_simple_fn(k, || rng.random_range(0.1..1.0));
        w /= w.sum();
        let means = Array2::from_shape_simple_fn((k, d), || rng.random_range(-2.0..2.0));
        let cov = if full {
            Covariances::Full(
                (0..k)
                    .map(|_| {
                        let a = Array2::from_shape_simple_fn((d, d), || rng.random_range(-1.0..1.0));
                        a.dot(&a.t()) + Array2::<f64>::eye(d) * 0.5
                    })
                    .collect(),
            )
        } else {
            Covariances::Diagonal(Array2::from_shape_simple_fn((k, d), || rng.random_range(0.2..2.0)))
        };
        GmmModel::new(w, means, cov).unwrap()
    }

    fn inverse_det(m: &Array2<f64>) -> (DMatrix<f64>, f64) {
        let d = m.nrows();
        let mm = DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
        (mm.clone().try_inverse().unwrap(), mm.determinant())
    }

    #[test]
    fn nll_matches_naive_density_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for full in [false, true] {
            let g = random_model(&mut rng, 3, 3, full);
            for _ in 0..20 {
                let x = Array1::from_shape_simple_fn(3, || rng.random_range(-2.0..2.0));
                let mut p = 0.0;
                for c in 0..3 {
                    let cov = match g.covariances() {
                        Covariances::Diagonal(v) => Array2::from_diag(&v.row(c)),
                        Covariances::Full(m) => m[c].clone(),
                    };
                    let (inv, det) = inverse_det(&cov);
                    let diff = DMatrix::from_fn(3, 1, |i, _| x[i] - g.means()[[c, i]]);
                    let maha = (diff.transpose() * inv * &diff)[(0, 0)];
                    let dens = (-0.5 * maha).exp() / ((2.0 * std::f64::consts::PI).powi(3) * det).sqrt();
                    p += g.weights()[c] * dens;
                }
                assert_abs_diff_eq!(g.nll(x.view()).unwrap(), -p.ln(), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn nll_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_model(&mut rng, 4, 2, false);
        let perm = [2usize, 0, 3, 1];
        let Covariances::Diagonal(v) = g.covariances() else { unreachable!() };
        let h = GmmModel::new(
            perm.iter().map(|&i| g.weights()[i]).collect(),
            g.means().select(Axis(0), &perm),
            Covariances::Diagonal(v.select(Axis(0), &perm)),
        )
        .unwrap();
        let x = Array1::from_vec(vec![0.5, -0.25]);
        assert_abs_diff_eq!(g.nll(x.view()).unwrap(), h.nll(x.view()).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn nll_rejects_bad_input() {
        let g = standard(1, 2);
        assert!(g.nll(Array1::zeros(3).view()).is_err());
        assert!(g.nll(Array1::from_vec(vec![f64::NAN, 0.0]).view()).is_err());
    }

    #[test]
    fn model_rejects_invalid_parameters() {
        let means = Array2::<f64>::zeros((2, 1));
        let cov = Covariances::Diagonal(Array2::ones((2, 1)));
        assert!(GmmModel::new(Array1::from_vec(vec![0.7, 0.7]), means.clone(), cov.clone()).is_err());
        assert!(GmmModel::new(Array1::from_vec(vec![1.0, 0.0]), means.clone(), cov).is_err());
        let neg = Covariances::Diagonal(Array2::from_elem((2, 1), -1.0));
        assert!(GmmModel::new(Array1::from_vec(vec![0.5, 0.5]), means, neg).is_err());
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = Array2::from_shape_fn((500, 3), |(_, c)| (c as f64 + 1.0) * rng.sample::<f64, _>(StandardNormal));
        let fit = gmm_fit_em(data.view(), &GmmConfig { k: 1, ..Default::default() }).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 1);
        let mean = data.mean_axis(Axis(0)).unwrap();
        let var = data.var_axis(Axis(0), 0.0);
        for j in 0..3 {
            assert_abs_diff_eq!(fit.model.means()[[0, j]], mean[j], epsilon = 1e-12);
            let Covariances::Diagonal(v) = fit.model.covariances() else { unreachable!() };
            assert_abs_diff_eq!(v[[0, j]], var[j], epsilon = 1e-10);
        }
        assert_eq!(fit.model.weights()[0], 1.0);
    }

    #[test]
    fn recovers_two_separated_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let data = Array2::from_shape_fn((2000, 1), |(i, _)| normal.sample(&mut rng) + if i % 2 == 0 { 0.0 } else { 10.0 });
        let fit = gmm_fit_em(data.view(), &GmmConfig { k: 2, seed: 3, ..Default::default() }).unwrap();
        let mut comps: Vec<(f64, f64)> = (0..2).map(|c| (fit.model.means()[[c, 0]], fit.model.weights()[c])).collect();
        comps.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((comps[0].0 - 0.0).abs() < 0.1 && (comps[1].0 - 10.0).abs() < 0.1, "{comps:?}");
        assert!((comps[0].1 - 0.5).abs() < 0.05 && (comps[1].1 - 0.5).abs() < 0.05);
        assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-8));
    }

    #[test]
    fn full_covariance_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let l = Array2::from_shape_vec((3, 3), vec![1.0, 0.0, 0.0, 0.5, 0.8, 0.0, -0.3, 0.2, 0.6]).unwrap();
        let truth = l.dot(&l.t());
        let z = Array2::from_shape_simple_fn((5000, 3), || rng.sample::<f64, _>(StandardNormal));
        let data = z.dot(&l.t());
        let fit = gmm_fit_em(data.view(), &GmmConfig { k: 1, cov_type: CovType::Full, ..Default::default() }).unwrap();
        let Covariances::Full(m) = fit.model.covariances() else { unreachable!() };
        let frob = (&m[0] - &truth).mapv(|v| v * v).sum().sqrt();
        assert!(frob < 0.1, "frobenius distance {frob}");
    }

    #[test]
    fn duplicate_points_are_floored() {
        // more components than distinct points
        let data = Array2::from_shape_fn((40, 2), |(i, j)| ((i % 3) * (j + 1)) as f64);
        for cov_type in [CovType::Diagonal, CovType::Full] {
            let fit = gmm_fit_em(data.view(), &GmmConfig { k: 5, cov_type, ..Default::default() }).unwrap();
            assert!(fit.model.nll_batch(data.view()).unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn responsibilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for full in [false, true] {
            let g = random_model(&mut rng, 4, 3, full);
            let x = Array2::from_shape_simple_fn((50, 3), || rng.random_range(-6.0..6.0));
            let r = g.responsibilities(x.view()).unwrap();
            for row in r.rows() {
                assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn trace_is_monotone_for_every_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let data = Array2::from_shape_fn((600, 3), |(i, j)| (i % 4) as f64 * (j as f64 - 1.0) + rng.sample::<f64, _>(StandardNormal));
        for k in [1, 3, 8] {
            for cov_type in [CovType::Diagonal, CovType::Full] {
                let fit = gmm_fit_em(data.view(), &GmmConfig { k, cov_type, seed: k as u64, ..Default::default() }).unwrap();
                assert!(fit.reseeds.is_empty());
                for w in fit.log_likelihood.windows(2) {
                    assert!(w[1] >= w[0] - 1e-8, "k={k} {cov_type:?}: {w:?}");
                }
            }
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let data = Array2::from_shape_simple_fn((400, 2), || rng.random_range(-1.0..1.0));
        let cfg = GmmConfig { k: 4, seed: 5, ..Default::default() };
        let a = gmm_fit_em(data.view(), &cfg).unwrap();
        let b = gmm_fit_em(data.view(), &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log_likelihood, b.log_likelihood);
    }

    #[test]
    fn rejects_too_few_samples() {
        let data = Array2::<f64>::zeros((3, 2));
        assert!(gmm_fit_em(data.view(), &GmmConfig { k: 4, ..Default::default() }).is_err());
    }

    #[test]
    fn doc_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for full in [false, true] {
            let g = random_model(&mut rng, 3, 2, full);
            let text = serde_json::to_string(&g.to_doc()).unwrap();
            let back = GmmModel::<f64>::from_doc(&serde_json::from_str(&text).unwrap()).unwrap();
            assert_eq!(back, g);
        }
    }
}
