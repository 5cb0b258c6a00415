use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Activation, ForwardCache, LayerGrad, Mlp};
use crate::error::{ensure, AsdError, Result};
use crate::scalar::Scalar;
use crate::seed::mix_seed;

/// Widths of the encoder: `320 -> 64 -> 32 -> 16`.
pub const ENCODER_WIDTHS: [usize; 4] = [320, 64, 32, 16];
/// Widths of every decoder: `16 -> 32 -> 64 -> 320`.
pub const DECODER_WIDTHS: [usize; 4] = [16, 32, 64, 320];
/// Quantiles predicted by the Q-LAMP heads.
pub const QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

fn encoder_activations() -> [Activation; 3] {
    [Activation::leaky(); 3]
}

fn decoder_activations() -> [Activation; 3] {
    [Activation::leaky(), Activation::leaky(), Activation::Identity]
}

pub(crate) fn new_encoder<T: Scalar>(rng: &mut ChaCha8Rng) -> Mlp<T> {
    Mlp::glorot(&ENCODER_WIDTHS, &encoder_activations(), rng)
}

pub(crate) fn new_decoder<T: Scalar>(rng: &mut ChaCha8Rng) -> Mlp<T> {
    Mlp::glorot(&DECODER_WIDTHS, &decoder_activations(), rng)
}

/// Feature flavour read off the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LampMode {
    /// 16-dimensional bottleneck only.
    OneLamp,
    /// All encoder activations, `64 ++ 32 ++ 16` = 112 dimensions.
    Lamp,
}

impl LampMode {
    pub fn dim(self) -> usize {
        match self {
            LampMode::OneLamp => 16,
            LampMode::Lamp => 112,
        }
    }
}

/// Encoder activation features for a batch (one row per sample), ordered
/// outer to inner.
pub fn encoder_features<T: Scalar>(encoder: &Mlp<T>, x: ArrayView2<'_, T>, mode: LampMode) -> Result<Array2<T>> {
    let cache = encoder.forward_batch(x)?;
    Ok(match mode {
        LampMode::OneLamp => cache.output().clone(),
        LampMode::Lamp => {
            let views: Vec<_> = cache.outputs.iter().map(|a| a.view()).collect();
            concatenate(Axis(1), &views).expect("rows agree")
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoder<T> {
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
}

/// Result of [`AutoEncoder::forward`].
#[derive(Debug, Clone)]
pub struct AeOutput<T> {
    pub reconstruction: Array1<T>,
    /// Encoder activations, widths 64, 32, 16.
    pub activations: Vec<Array1<T>>,
}

impl<T: Scalar> AutoEncoder<T> {
    pub fn new(encoder: Mlp<T>, decoder: Mlp<T>) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(AsdError::DimensionMismatch {
                expected: encoder.output_dim(),
                got: decoder.input_dim(),
            });
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(AsdError::DimensionMismatch {
                expected: encoder.input_dim(),
                got: decoder.output_dim(),
            });
        }
        Ok(Self { encoder, decoder })
    }

    /// Fresh network with the fixed 320-64-32-16 topology.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = new_encoder(&mut rng);
        let decoder = new_decoder(&mut rng);
        Self { encoder, decoder }
    }

    pub fn dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn forward(&self, x: ArrayView1<'_, T>) -> Result<AeOutput<T>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AsdError::invalid("autoencoder input contains non-finite values"));
        }
        let activations = self.encoder.forward_one(x)?;
        let code = activations.last().unwrap().view();
        let reconstruction = self.decoder.forward_one(code)?.pop().unwrap();
        Ok(AeOutput {
            reconstruction,
            activations,
        })
    }

    pub fn reconstruct_batch(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let code = self.encoder.output_batch(x)?;
        self.decoder.output_batch(code.view())
    }

    /// Mean squared reconstruction error of one vector.
    pub fn mse_score(&self, x: ArrayView1<'_, T>) -> Result<T> {
        let out = self.forward(x)?;
        let d = T::from_usize_lossy(x.len());
        Ok(x.iter()
            .zip(out.reconstruction.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / d)
    }

    /// Row-wise mean squared reconstruction error.
    pub fn mse_batch(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        let recon = self.reconstruct_batch(x)?;
        let diff = &recon - &x;
        Ok((&diff * &diff).mean_axis(Axis(1)).expect("non-empty rows"))
    }

    pub fn lamp_features(&self, x: ArrayView1<'_, T>, mode: LampMode) -> Result<Array1<T>> {
        let f = encoder_features(&self.encoder, x.insert_axis(Axis(0)), mode)?;
        Ok(f.row(0).to_owned())
    }
}

/// Free-function form of [`AutoEncoder::forward`].
pub fn ae_forward<T: Scalar>(ae: &AutoEncoder<T>, x: ArrayView1<'_, T>) -> Result<AeOutput<T>> {
    ae.forward(x)
}

pub fn mse_score<T: Scalar>(ae: &AutoEncoder<T>, x: ArrayView1<'_, T>) -> Result<T> {
    ae.mse_score(x)
}

pub fn lamp_features<T: Scalar>(ae: &AutoEncoder<T>, x: ArrayView1<'_, T>, mode: LampMode) -> Result<Array1<T>> {
    ae.lamp_features(x, mode)
}

/// Pinball loss `max(q (y - y_hat), (q - 1)(y - y_hat))`.
pub fn pinball_loss<T: Scalar>(q: f64, y: T, y_hat: T) -> Result<T> {
    ensure(q > 0.0 && q < 1.0, || format!("quantile must lie in (0, 1), got {q}"))?;
    Ok(pinball(T::lit(q), y - y_hat))
}

#[inline]
pub(crate) fn pinball<T: Scalar>(q: T, residual: T) -> T {
    (q * residual).max((q - T::one()) * residual)
}

/// Shared encoder with one decoder head per entry of [`QUANTILES`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileAutoEncoder<T> {
    pub encoder: Mlp<T>,
    pub heads: Vec<Mlp<T>>,
}

impl<T: Scalar> QuantileAutoEncoder<T> {
    pub fn new(encoder: Mlp<T>, heads: Vec<Mlp<T>>) -> Result<Self> {
        ensure(heads.len() == QUANTILES.len(), || {
            format!("expected {} quantile heads, got {}", QUANTILES.len(), heads.len())
        })?;
        for h in &heads {
            AutoEncoder::new(encoder.clone(), h.clone())?;
            if h.widths() != DECODER_WIDTHS {
                return Err(AsdError::invalid("quantile head topology differs from the decoder"));
            }
        }
        Ok(Self { encoder, heads })
    }

    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = new_encoder(&mut rng);
        let heads = QUANTILES.iter().map(|_| new_decoder(&mut rng)).collect();
        Self { encoder, heads }
    }

    /// Predictions of every head, in [`QUANTILES`] order.
    pub fn predict_batch(&self, x: ArrayView2<'_, T>) -> Result<Vec<Array2<T>>> {
        let code = self.encoder.output_batch(x)?;
        self.heads.iter().map(|h| h.output_batch(code.view())).collect()
    }

    pub fn lamp_features(&self, x: ArrayView1<'_, T>, mode: LampMode) -> Result<Array1<T>> {
        let f = encoder_features(&self.encoder, x.insert_axis(Axis(0)), mode)?;
        Ok(f.row(0).to_owned())
    }
}

/// Frozen random target network and a trainable predictor of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RndPair<T> {
    target: Mlp<T>,
    pub predictor: Mlp<T>,
}

impl<T: Scalar> RndPair<T> {
    pub fn new(target: Mlp<T>, predictor: Mlp<T>) -> Result<Self> {
        if target.widths() != predictor.widths() {
            return Err(AsdError::invalid("RND target and predictor topologies differ"));
        }
        Ok(Self { target, predictor })
    }

    /// Target drawn from a seed stream distinct from the predictor's.
    pub fn seeded(seed: u64) -> Self {
        let mut target_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "rnd-target"));
        let mut predictor_rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            target: new_encoder(&mut target_rng),
            predictor: new_encoder(&mut predictor_rng),
        }
    }

    pub fn target(&self) -> &Mlp<T> {
        &self.target
    }

    /// Mean squared difference between target and predictor outputs.
    pub fn score(&self, x: ArrayView1<'_, T>) -> Result<T> {
        Ok(self.score_batch(x.insert_axis(Axis(0)))?[0])
    }

    pub fn score_batch(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        let t = self.target.output_batch(x)?;
        let p = self.predictor.output_batch(x)?;
        let diff = &p - &t;
        Ok((&diff * &diff).mean_axis(Axis(1)).expect("non-empty rows"))
    }
}

pub fn rnd_score<T: Scalar>(pair: &RndPair<T>, x: ArrayView1<'_, T>) -> Result<T> {
    pair.score(x)
}

/// Gradients of a model's training loss, one entry per trainable network in
/// the order of [`Trainable::networks_mut`].
pub type ModelGrads<T> = Vec<Vec<LayerGrad<T>>>;

/// A model trained by mini-batch gradient descent.
pub trait Trainable<T: Scalar> {
    fn input_dim(&self) -> usize;

    /// Data loss of a batch and its gradient w.r.t. every trainable parameter.
    fn loss_and_grads(&self, batch: ArrayView2<'_, T>) -> Result<(T, ModelGrads<T>)>;

    fn networks(&self) -> Vec<&Mlp<T>>;

    fn networks_mut(&mut self) -> Vec<&mut Mlp<T>>;
}

fn mse_grad<T: Scalar>(pred: &Array2<T>, target: ArrayView2<'_, T>) -> (T, Array2<T>) {
    let scale = T::from_usize_lossy(pred.len());
    let diff = pred - &target;
    let loss = diff.iter().map(|&d| d * d).sum::<T>() / scale;
    let grad = diff.mapv(|d| T::lit(2.0) * d / scale);
    (loss, grad)
}

impl<T: Scalar> Trainable<T> for AutoEncoder<T> {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn loss_and_grads(&self, batch: ArrayView2<'_, T>) -> Result<(T, ModelGrads<T>)> {
        let enc = self.encoder.forward_batch(batch)?;
        let dec = self.decoder.forward_batch(enc.output().view())?;
        let (loss, g) = mse_grad(dec.output(), batch);
        let (dec_grads, g_code) = self.decoder.backward(&dec, &g);
        let (enc_grads, _) = self.encoder.backward(&enc, &g_code);
        Ok((loss, vec![enc_grads, dec_grads]))
    }

    fn networks(&self) -> Vec<&Mlp<T>> {
        vec![&self.encoder, &self.decoder]
    }

    fn networks_mut(&mut self) -> Vec<&mut Mlp<T>> {
        vec![&mut self.encoder, &mut self.decoder]
    }
}

impl<T: Scalar> Trainable<T> for QuantileAutoEncoder<T> {
    fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Sum over heads of the mean pinball loss.
    fn loss_and_grads(&self, batch: ArrayView2<'_, T>) -> Result<(T, ModelGrads<T>)> {
        let enc = self.encoder.forward_batch(batch)?;
        let code = enc.output().view();
        let scale = T::from_usize_lossy(batch.len());
        let mut total = T::zero();
        let mut g_code = Array2::<T>::zeros(code.raw_dim());
        let mut head_grads = Vec::with_capacity(self.heads.len());
        for (head, &q) in self.heads.iter().zip(QUANTILES.iter()) {
            let q = T::lit(q);
            let cache: ForwardCache<T> = head.forward_batch(code)?;
            let pred = cache.output();
            let mut g = Array2::<T>::zeros(pred.raw_dim());
            for ((gv, &p), &y) in g.iter_mut().zip(pred.iter()).zip(batch.iter()) {
                let r = y - p;
                total += pinball(q, r) / scale;
                *gv = if r > T::zero() {
                    -q / scale
                } else if r < T::zero() {
                    (T::one() - q) / scale
                } else {
                    T::zero()
                };
            }
            let (grads, gc) = head.backward(&cache, &g);
            g_code += &gc;
            head_grads.push(grads);
        }
        let (enc_grads, _) = self.encoder.backward(&enc, &g_code);
        let mut all = vec![enc_grads];
        all.extend(head_grads);
        Ok((total, all))
    }

    fn networks(&self) -> Vec<&Mlp<T>> {
        std::iter::once(&self.encoder).chain(self.heads.iter()).collect()
    }

    fn networks_mut(&mut self) -> Vec<&mut Mlp<T>> {
        std::iter::once(&mut self.encoder).chain(self.heads.iter_mut()).collect()
    }
}

impl<T: Scalar> Trainable<T> for RndPair<T> {
    fn input_dim(&self) -> usize {
        self.predictor.input_dim()
    }

    fn loss_and_grads(&self, batch: ArrayView2<'_, T>) -> Result<(T, ModelGrads<T>)> {
        let target = self.target.output_batch(batch)?;
        let cache = self.predictor.forward_batch(batch)?;
        let (loss, g) = mse_grad(cache.output(), target.view());
        let (grads, _) = self.predictor.backward(&cache, &g);
        Ok((loss, vec![grads]))
    }

    /// Only the predictor is trainable.
    fn networks(&self) -> Vec<&Mlp<T>> {
        vec![&self.predictor]
    }

    fn networks_mut(&mut self) -> Vec<&mut Mlp<T>> {
        vec![&mut self.predictor]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::layer::DenseLayer;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn zero_ae() -> AutoEncoder<f64> {
        let z = |i, o, a| DenseLayer::zeros(i, o, a);
        let enc = Mlp::new(vec![
            z(320, 64, Activation::leaky()),
            z(64, 32, Activation::leaky()),
            z(32, 16, Activation::leaky()),
        ])
        .unwrap();
        let dec = Mlp::new(vec![
            z(16, 32, Activation::leaky()),
            z(32, 64, Activation::leaky()),
            z(64, 320, Activation::Identity),
        ])
        .unwrap();
        AutoEncoder::new(enc, dec).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_network_reconstructs_zero() {
        let ae = zero_ae();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vec(&mut rng, 320);
        let out = ae.forward(x.view()).unwrap();
        assert!(out.reconstruction.iter().all(|&v| v == 0.0));
        assert_eq!(
            out.activations.iter().map(|a| a.len()).collect::<Vec<_>>(),
            vec![64, 32, 16]
        );
        let ones = Array1::<f64>::ones(320);
        assert_abs_diff_eq!(ae.mse_score(ones.view()).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn single_path_routes_first_component() {
        let mut ae = zero_ae();
        // x0 -> unit 0 of every layer with weight 1; positive x0 stays on the linear side
        for l in ae.encoder.layers.iter_mut().chain(ae.decoder.layers.iter_mut()) {
            l.weights[[0, 0]] = 1.0;
        }
        let mut x = Array1::<f64>::zeros(320);
        x[0] = 0.73;
        x[5] = -2.0;
        let out = ae.forward(x.view()).unwrap();
        assert_eq!(out.reconstruction[0], 0.73);
        assert!(out.reconstruction.iter().skip(1).all(|&v| v == 0.0));
    }

    fn manual_forward(layers: &[DenseLayer<f64>], x: &Array1<f64>) -> Vec<Array1<f64>> {
        let mut acts = Vec::new();
        let mut cur = x.clone();
        for l in layers {
            let mut next = Array1::zeros(l.outputs());
            for o in 0..l.outputs() {
                let mut z = l.bias[o];
                for i in 0..l.inputs() {
                    z += l.weights[[o, i]] * cur[i];
                }
                next[o] = if z < 0.0 {
                    match l.activation {
                        Activation::LeakyRelu { alpha } => alpha * z,
                        Activation::Identity => z,
                    }
                } else {
                    z
                };
            }
            acts.push(next.clone());
            cur = next;
        }
        acts
    }

    #[test]
    fn forward_matches_scalar_loops() {
        let mut ae = AutoEncoder::<f64>::seeded(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for l in ae.encoder.layers.iter_mut().chain(ae.decoder.layers.iter_mut()) {
            l.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
        let x = random_vec(&mut rng, 320);
        let out = ae.forward(x.view()).unwrap();
        let enc = manual_forward(&ae.encoder.layers, &x);
        let dec = manual_forward(&ae.decoder.layers, enc.last().unwrap());
        for (a, b) in out.activations.iter().zip(&enc) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-9);
            }
        }
        for (u, v) in out.reconstruction.iter().zip(dec.last().unwrap().iter()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let ae = AutoEncoder::<f64>::seeded(0);
        assert!(ae.forward(Array1::zeros(10).view()).is_err());
    }

    #[test]
    fn mse_scales_quadratically() {
        let ae = zero_ae();
        let x = Array1::from_elem(320, 0.3);
        let x2 = &x * 2.0;
        let a = ae.mse_score(x.view()).unwrap();
        let b = ae.mse_score(x2.view()).unwrap();
        assert_abs_diff_eq!(b, 4.0 * a, epsilon = 1e-12);
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(0.3, 1.5f64, 1.5).unwrap(), 0.0);
        assert_abs_diff_eq!(pinball_loss(0.5, 1.0f64, 0.0).unwrap(), 0.5);
        assert_abs_diff_eq!(pinball_loss(0.9, 0.0f64, 1.0).unwrap(), 0.1, epsilon = 1e-12);
        assert!(pinball_loss(0.0, 1.0f64, 0.0).is_err());
        assert!(pinball_loss(1.0, 1.0f64, 0.0).is_err());
    }

    #[test]
    fn lamp_dims_and_order() {
        let ae = AutoEncoder::<f64>::seeded(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_vec(&mut rng, 320);
        let one = ae.lamp_features(x.view(), LampMode::OneLamp).unwrap();
        let full = ae.lamp_features(x.view(), LampMode::Lamp).unwrap();
        assert_eq!(one.len(), 16);
        assert_eq!(full.len(), 112);
        let acts = ae.forward(x.view()).unwrap().activations;
        assert_eq!(full.slice(ndarray::s![..64]), acts[0]);
        assert_eq!(full.slice(ndarray::s![64..96]), acts[1]);
        assert_eq!(full.slice(ndarray::s![96..]), acts[2]);
        assert_eq!(one, acts[2]);

        let z = zero_ae();
        let f = z.lamp_features(Array1::zeros(320).view(), LampMode::Lamp).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rnd_clone_scores_zero() {
        let pair = RndPair::<f64>::seeded(3);
        assert_ne!(pair.target(), &pair.predictor);
        let cloned = RndPair::new(pair.target().clone(), pair.target().clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let x = random_vec(&mut rng, 320);
            assert_eq!(cloned.score(x.view()).unwrap(), 0.0);
        }
        let z = Array1::<f64>::zeros(320);
        // zero-bias nets map zero to zero
        assert_eq!(pair.score(z.view()).unwrap(), 0.0);
    }
}
