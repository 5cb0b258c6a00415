use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{LayerGrad, Mlp};
use super::models::{ModelGrads, Trainable};
use crate::error::{ensure, AsdError, Result};
use crate::scalar::Scalar;
use crate::seed::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Coefficient of the `l2 / 2 * ||W||^2` penalty on weights (not biases).
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 50,
            learning_rate: 0.002,
            l2: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.batch_size >= 1, || "batch_size must be >= 1".into())?;
        ensure(self.epochs >= 1, || "epochs must be >= 1".into())?;
        ensure(self.learning_rate > 0.0, || "learning_rate must be positive".into())?;
        ensure(self.l2 >= 0.0, || "l2 must be non-negative".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean data loss of each epoch, weighted by batch size.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&f64::NAN)
    }
}

/// Data loss plus the L2 penalty, with matching gradients.
pub fn regularized_loss_and_grads<T: Scalar, M: Trainable<T>>(
    model: &M,
    batch: ArrayView2<'_, T>,
    l2: f64,
) -> Result<(T, ModelGrads<T>)> {
    let (mut loss, mut grads) = model.loss_and_grads(batch)?;
    if l2 > 0.0 {
        let l2 = T::lit(l2);
        for (net, g) in model.networks().into_iter().zip(grads.iter_mut()) {
            loss += l2 * net.weight_norm_sq() / T::lit(2.0);
            add_weight_decay(net, g, l2);
        }
    }
    Ok((loss, grads))
}

fn add_weight_decay<T: Scalar>(net: &Mlp<T>, grads: &mut [LayerGrad<T>], l2: T) {
    for (layer, g) in net.layers.iter().zip(grads.iter_mut()) {
        g.weights.scaled_add(l2, &layer.weights);
    }
}

struct Moments<T> {
    m_w: Array2<T>,
    v_w: Array2<T>,
    m_b: Array1<T>,
    v_b: Array1<T>,
}

/// Adam with bias correction, `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: i32,
    state: Vec<Vec<Moments<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, networks: &[&Mlp<T>]) -> Self {
        let state = networks
            .iter()
            .map(|net| {
                net.layers
                    .iter()
                    .map(|l| Moments {
                        m_w: Array2::zeros(l.weights.raw_dim()),
                        v_w: Array2::zeros(l.weights.raw_dim()),
                        m_b: Array1::zeros(l.bias.raw_dim()),
                        v_b: Array1::zeros(l.bias.raw_dim()),
                    })
                    .collect()
            })
            .collect();
        Self {
            lr: T::lit(lr),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            state,
        }
    }

    pub fn step(&mut self, networks: Vec<&mut Mlp<T>>, grads: &ModelGrads<T>) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let one = T::one();
        let c1 = one - b1.powi(self.step);
        let c2 = one - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        for ((net, net_grads), net_state) in networks.into_iter().zip(grads).zip(self.state.iter_mut()) {
            for ((layer, g), st) in net.layers.iter_mut().zip(net_grads).zip(net_state.iter_mut()) {
                update(&mut layer.weights, &g.weights, &mut st.m_w, &mut st.v_w, b1, b2, c1, c2, lr, eps);
                update(&mut layer.bias, &g.bias, &mut st.m_b, &mut st.v_b, b1, b2, c1, c2, lr, eps);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update<T: Scalar, D: ndarray::Dimension>(
    param: &mut ndarray::Array<T, D>,
    grad: &ndarray::Array<T, D>,
    m: &mut ndarray::Array<T, D>,
    v: &mut ndarray::Array<T, D>,
    b1: T,
    b2: T,
    c1: T,
    c2: T,
    lr: T,
    eps: T,
) {
    let one = T::one();
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
}

/// Mini-batch Adam training. Shuffling is seeded from `cfg.seed`; the batch
/// size is clamped to the dataset size.
pub fn train<T: Scalar, M: Trainable<T>>(model: &mut M, data: ArrayView2<'_, T>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = data.nrows();
    ensure(n >= 1, || "training data is empty".into())?;
    if data.ncols() != model.input_dim() {
        return Err(AsdError::DimensionMismatch {
            expected: model.input_dim(),
            got: data.ncols(),
        });
    }
    let batch_size = cfg.batch_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "shuffle"));
    let mut opt = Adam::new(cfg.learning_rate, &model.networks());
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let batch = data.select(Axis(0), idx);
            let (loss, grads) = {
                let (data_loss, mut grads) = model.loss_and_grads(batch.view())?;
                if cfg.l2 > 0.0 {
                    let l2 = T::lit(cfg.l2);
                    for (net, g) in model.networks().into_iter().zip(grads.iter_mut()) {
                        add_weight_decay(net, g, l2);
                    }
                }
                (data_loss.as_f64(), grads)
            };
            if !loss.is_finite() {
                return Err(AsdError::TrainingDiverged { epoch, batch: b, loss });
            }
            total += loss * idx.len() as f64;
            opt.step(model.networks_mut(), &grads);
        }
        epoch_losses.push(total / n as f64);
    }
    Ok(TrainReport { epoch_losses })
}
