use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AsdError, Result};
use crate::scalar::Scalar;

/// Slope used on the negative side of every leaky ReLU in this crate.
pub const LEAKY_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { alpha: f64 },
    Identity,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu { alpha: LEAKY_ALPHA }
    }

    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::LeakyRelu { alpha } if z < T::zero() => z * T::lit(alpha),
            _ => z,
        }
    }

    /// Derivative w.r.t. the pre-activation; 1 at exactly zero.
    #[inline]
    fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::LeakyRelu { alpha } if z < T::zero() => T::lit(alpha),
            _ => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `out x in`
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    /// Uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((outputs, inputs), || T::lit(rng.random_range(-limit..limit)));
        Self {
            weights,
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    /// Pre-activations for a batch laid out one sample per row.
    fn preactivate(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

/// Gradients for one [`DenseLayer`].
#[derive(Debug, Clone)]
pub struct LayerGrad<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

/// Intermediate values kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input to each layer.
    pub inputs: Vec<Array2<T>>,
    /// Pre-activation of each layer.
    pub pre: Vec<Array2<T>>,
    /// Activated output of each layer.
    pub outputs: Vec<Array2<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Array2<T> {
        self.outputs.last().expect("non-empty network")
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(AsdError::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(AsdError::DimensionMismatch {
                    expected: pair[0].outputs(),
                    got: pair[1].inputs(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(AsdError::DimensionMismatch {
                    expected: l.outputs(),
                    got: l.bias.len(),
                });
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(AsdError::invalid("non-finite network parameter"));
            }
        }
        Ok(Self { layers })
    }

    /// Random network with the given layer widths and one activation per layer.
    pub fn glorot<R: Rng>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert_eq!(widths.len(), activations.len() + 1);
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| DenseLayer::glorot(w[0], w[1], a, rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs()))
            .collect()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(AsdError::DimensionMismatch {
                expected: self.input_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, T>) -> Result<ForwardCache<T>> {
        self.check_input(x.ncols())?;
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut current = x.to_owned();
        for layer in &self.layers {
            let z = layer.preactivate(current.view());
            let act = layer.activation;
            let a = z.mapv(|v| act.apply(v));
            cache.inputs.push(current);
            cache.pre.push(z);
            current = a.clone();
            cache.outputs.push(a);
        }
        Ok(cache)
    }

    /// Per-layer activations of a single input vector.
    pub fn forward_one(&self, x: ArrayView1<'_, T>) -> Result<Vec<Array1<T>>> {
        let cache = self.forward_batch(x.insert_axis(Axis(0)))?;
        Ok(cache.outputs.into_iter().map(|a| a.row(0).to_owned()).collect())
    }

    pub fn output_batch(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(x.ncols())?;
        let mut current = x.to_owned();
        for layer in &self.layers {
            let act = layer.activation;
            current = layer.preactivate(current.view()).mapv(|v| act.apply(v));
        }
        Ok(current)
    }

    /// Back-propagates `grad_out` (d loss / d output) through a cached forward pass.
    /// Returns the parameter gradients and d loss / d input.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &Array2<T>) -> (Vec<LayerGrad<T>>, Array2<T>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            g.zip_mut_with(&cache.pre[i], |gv, &z| *gv *= act.derivative(z));
            let dw = g.t().dot(&cache.inputs[i]);
            let db = g.sum_axis(Axis(0));
            let next = g.dot(&layer.weights);
            grads.push(LayerGrad { weights: dw, bias: db });
            g = next;
        }
        grads.reverse();
        (grads, g)
    }

    pub fn weight_norm_sq(&self) -> T {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(|&w| w * w).sum::<T>())
            .sum()
    }
}
