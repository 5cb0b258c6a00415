//! JSON persistence for the neural models.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layer::{Activation, DenseLayer, Mlp, LEAKY_ALPHA};
use super::models::{AutoEncoder, QuantileAutoEncoder, RndPair, DECODER_WIDTHS, ENCODER_WIDTHS};
use super::train::TrainConfig;
use crate::error::{AsdError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    /// Row-major `out x in` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedNetwork {
    pub role: String,
    pub layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    /// `ae`, `q_lamp` or `rnd`.
    pub kind: String,
    pub topology: Vec<usize>,
    pub activation: String,
    pub alpha: f64,
    pub networks: Vec<NamedNetwork>,
    pub train_config: Option<TrainConfig>,
    pub seed: u64,
}

/// Any of the trainable networks, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum NeuralModel<T> {
    Ae(AutoEncoder<T>),
    Quantile(QuantileAutoEncoder<T>),
    Rnd(RndPair<T>),
}

fn layer_doc<T: Scalar>(l: &DenseLayer<T>) -> LayerDoc {
    LayerDoc {
        weights: l.weights.rows().into_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect(),
        bias: l.bias.iter().map(|v| v.as_f64()).collect(),
        activation: l.activation,
    }
}

fn net_doc<T: Scalar>(role: &str, net: &Mlp<T>) -> NamedNetwork {
    NamedNetwork {
        role: role.to_string(),
        layers: net.layers.iter().map(layer_doc).collect(),
    }
}

fn layer_from_doc<T: Scalar>(d: &LayerDoc) -> Result<DenseLayer<T>> {
    let rows = d.weights.len();
    let cols = d.weights.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 || d.weights.iter().any(|r| r.len() != cols) {
        return Err(AsdError::invalid("ragged or empty weight matrix"));
    }
    let flat: Vec<T> = d.weights.iter().flatten().map(|&v| T::lit(v)).collect();
    let weights = Array2::from_shape_vec((rows, cols), flat).expect("checked shape");
    Ok(DenseLayer {
        weights,
        bias: Array1::from_iter(d.bias.iter().map(|&v| T::lit(v))),
        activation: d.activation,
    })
}

fn net_from_doc<T: Scalar>(docs: &[NamedNetwork], role: &str, widths: &[usize]) -> Result<Mlp<T>> {
    let nd = docs
        .iter()
        .find(|n| n.role == role)
        .ok_or_else(|| AsdError::invalid(format!("model document lacks network '{role}'")))?;
    let net = Mlp::new(nd.layers.iter().map(layer_from_doc).collect::<Result<_>>()?)?;
    if net.widths() != widths {
        return Err(AsdError::invalid(format!(
            "network '{role}' has widths {:?}, expected {widths:?}",
            net.widths()
        )));
    }
    Ok(net)
}

fn head_role(i: usize) -> String {
    format!("head_{i}")
}

impl<T: Scalar> NeuralModel<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            NeuralModel::Ae(_) => "ae",
            NeuralModel::Quantile(_) => "q_lamp",
            NeuralModel::Rnd(_) => "rnd",
        }
    }

    pub fn to_doc(&self, train_config: Option<TrainConfig>, seed: u64) -> NetworkDoc {
        let (topology, networks) = match self {
            NeuralModel::Ae(ae) => (
                ae.encoder.widths().into_iter().chain(ae.decoder.widths().into_iter().skip(1)).collect(),
                vec![net_doc("encoder", &ae.encoder), net_doc("decoder", &ae.decoder)],
            ),
            NeuralModel::Quantile(q) => {
                let mut nets = vec![net_doc("encoder", &q.encoder)];
                nets.extend(q.heads.iter().enumerate().map(|(i, h)| net_doc(&head_role(i), h)));
                (
                    q.encoder.widths().into_iter().chain(q.heads[0].widths().into_iter().skip(1)).collect(),
                    nets,
                )
            }
            NeuralModel::Rnd(r) => (
                r.predictor.widths(),
                vec![net_doc("target", r.target()), net_doc("predictor", &r.predictor)],
            ),
        };
        NetworkDoc {
            kind: self.kind().to_string(),
            topology,
            activation: "leaky_relu".to_string(),
            alpha: LEAKY_ALPHA,
            networks,
            train_config,
            seed,
        }
    }

    /// Rebuilds a model, checking that every layer chains to the fixed topology.
    pub fn from_doc(doc: &NetworkDoc) -> Result<Self> {
        let nets = &doc.networks;
        match doc.kind.as_str() {
            "ae" => Ok(NeuralModel::Ae(AutoEncoder::new(
                net_from_doc(nets, "encoder", &ENCODER_WIDTHS)?,
                net_from_doc(nets, "decoder", &DECODER_WIDTHS)?,
            )?)),
            "q_lamp" => {
                let encoder = net_from_doc(nets, "encoder", &ENCODER_WIDTHS)?;
                let heads = (0..3)
                    .map(|i| net_from_doc(nets, &head_role(i), &DECODER_WIDTHS))
                    .collect::<Result<Vec<_>>>()?;
                Ok(NeuralModel::Quantile(QuantileAutoEncoder::new(encoder, heads)?))
            }
            "rnd" => Ok(NeuralModel::Rnd(RndPair::new(
                net_from_doc(nets, "target", &ENCODER_WIDTHS)?,
                net_from_doc(nets, "predictor", &ENCODER_WIDTHS)?,
            )?)),
            other => Err(AsdError::invalid(format!("unknown network kind '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_exact() {
        for model in [
            NeuralModel::Ae(AutoEncoder::<f64>::seeded(1)),
            NeuralModel::Quantile(QuantileAutoEncoder::seeded(2)),
            NeuralModel::Rnd(RndPair::seeded(3)),
        ] {
            let doc = model.to_doc(Some(TrainConfig::default()), 9);
            let text = serde_json::to_string(&doc).unwrap();
            let back: NetworkDoc = serde_json::from_str(&text).unwrap();
            assert_eq!(NeuralModel::<f64>::from_doc(&back).unwrap(), model);
        }
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut doc = NeuralModel::Ae(AutoEncoder::<f64>::seeded(1)).to_doc(None, 0);
        doc.networks[1].layers[0].weights.pop();
        assert!(NeuralModel::<f64>::from_doc(&doc).is_err());
        let mut doc = NeuralModel::Ae(AutoEncoder::<f64>::seeded(1)).to_doc(None, 0);
        doc.networks.pop();
        assert!(NeuralModel::<f64>::from_doc(&doc).is_err());
    }
}
