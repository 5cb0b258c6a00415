//! Dense autoencoder family trained with hand-written backpropagation.
//!
//! * [`AutoEncoder`]: `320-64-32-16` encoder, mirrored decoder, leaky ReLU
//!   (alpha 0.2) everywhere except the linear output layer.
//! * [`QuantileAutoEncoder`]: shared encoder, one decoder head per quantile.
//! * [`RndPair`]: frozen random encoder and a predictor trained to match it.

mod layer;
mod models;
mod persist;
mod train;

pub use layer::{Activation, DenseLayer, ForwardCache, LayerGrad, Mlp, LEAKY_ALPHA};
pub use models::{
    ae_forward, encoder_features, lamp_features, mse_score, pinball_loss, rnd_score, AeOutput, AutoEncoder,
    LampMode, ModelGrads, QuantileAutoEncoder, RndPair, Trainable, DECODER_WIDTHS, ENCODER_WIDTHS, QUANTILES,
};
pub use persist::{LayerDoc, NetworkDoc, NeuralModel};
pub use train::{regularized_loss_and_grads, train, Adam, TrainConfig, TrainReport};
