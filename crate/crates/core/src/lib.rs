//! Anomalous sound detection for machine monitoring.
//!
//! Recordings go through a log-Mel front end ([`dsp`]), become sequences of
//! feature vectors ([`featurize`], optionally via the networks in
//! [`neural`]), and are scored by Gaussian-mixture normality models
//! ([`density`]). [`evaluation`] runs the balanced multi-seed protocol and
//! [`dataset`] handles WAV trees and the synthetic benchmark.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod dataset;
pub mod density;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod featurize;
pub mod neural;
pub mod scalar;
pub mod seed;

pub use error::{AsdError, ErrorClass, Result};
pub use scalar::Scalar;

pub type Waveform64 = dsp::Waveform<f64>;
pub type MelSpectrogram64 = dsp::MelSpectrogram<f64>;
pub type MelAnalyzer64 = dsp::MelAnalyzer<f64>;
pub type FeatureSequence64 = featurize::FeatureSequence<f64>;
pub type AutoEncoder64 = neural::AutoEncoder<f64>;
pub type QuantileAutoEncoder64 = neural::QuantileAutoEncoder<f64>;
pub type RndPair64 = neural::RndPair<f64>;
pub type PcaModel64 = density::PcaModel<f64>;
pub type GmmModel64 = density::GmmModel<f64>;
pub type DensityModel64 = density::DensityModel<f64>;
pub type Detector64 = evaluation::Detector<f64>;

pub type Waveform32 = dsp::Waveform<f32>;
pub type FeatureSequence32 = featurize::FeatureSequence<f32>;
pub type GmmModel32 = density::GmmModel<f32>;
