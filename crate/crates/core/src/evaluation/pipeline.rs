//! Model pipelines: how a recording becomes a feature sequence, how a
//! detector is fitted on normal sequences and how it scores a recording.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, RecordingMeta};
use crate::density::{pool, DensityConfig, DensityDoc, DensityModel, GmmConfig, Pooling};
use crate::dsp::{normalize_01, MelAnalyzer, MelParams, Waveform};
use crate::error::{ensure, AsdError, Result};
use crate::featurize::{read_fvec, sliding_patches, stack_vectors, FeatureSequence, PatchConfig};
use crate::neural::{
    encoder_features, train, AutoEncoder, LampMode, NetworkDoc, NeuralModel, QuantileAutoEncoder, RndPair,
    TrainConfig,
};
use crate::scalar::Scalar;
use crate::seed::mix_seed;

/// Mixture size used by the activation-feature pipelines.
pub const LAMP_MIXTURE_K: usize = 42;
/// Mixture size used by the raw-patch and external-feature pipelines.
pub const DEFAULT_MIXTURE_K: usize = 20;
/// Variance kept by PCA on external features.
pub const EXTERNAL_PCA_RETAIN: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Ae,
    OneLamp,
    Lamp,
    QLamp,
    Rnd,
    PatchGmm,
    ExternalGmm,
}

impl ModelTag {
    pub const ALL: [ModelTag; 7] = [
        ModelTag::Ae,
        ModelTag::OneLamp,
        ModelTag::Lamp,
        ModelTag::QLamp,
        ModelTag::Rnd,
        ModelTag::PatchGmm,
        ModelTag::ExternalGmm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Ae => "ae",
            ModelTag::OneLamp => "one_lamp",
            ModelTag::Lamp => "lamp",
            ModelTag::QLamp => "q_lamp",
            ModelTag::Rnd => "rnd",
            ModelTag::PatchGmm => "patch_gmm",
            ModelTag::ExternalGmm => "external_gmm",
        }
    }

    /// Whether the detector ends in a Gaussian mixture.
    pub fn uses_density(self) -> bool {
        !matches!(self, ModelTag::Ae | ModelTag::Rnd)
    }

    /// Whether the detector trains a network.
    pub fn uses_network(self) -> bool {
        !matches!(self, ModelTag::PatchGmm | ModelTag::ExternalGmm)
    }

    /// Default density settings: external embeddings are standardized and
    /// reduced by PCA, Mel patches and activations are used as they are.
    pub fn default_density(self) -> DensityConfig {
        let k = match self {
            ModelTag::OneLamp | ModelTag::Lamp | ModelTag::QLamp => LAMP_MIXTURE_K,
            _ => DEFAULT_MIXTURE_K,
        };
        let external = self == ModelTag::ExternalGmm;
        DensityConfig {
            gmm: GmmConfig { k, ..Default::default() },
            standardize: external,
            pca_retain: external.then_some(EXTERNAL_PCA_RETAIN),
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelTag {
    type Err = AsdError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| AsdError::invalid(format!("unknown model '{s}'")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalConfig {
    /// Directory mirroring the dataset layout with one `.fvec` file per recording.
    pub features_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: ModelTag,
    pub mel: MelParams,
    pub patch: PatchConfig,
    pub external: ExternalConfig,
    pub train: TrainConfig,
    /// `None` selects the model's default.
    pub density: Option<DensityConfig>,
    pub pooling: Pooling,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::new(ModelTag::PatchGmm)
    }
}

impl PipelineConfig {
    pub fn new(model: ModelTag) -> Self {
        Self {
            model,
            mel: MelParams::default(),
            patch: PatchConfig::default(),
            external: ExternalConfig::default(),
            train: TrainConfig::default(),
            density: None,
            pooling: Pooling::Mean,
        }
    }

    pub fn density_config(&self) -> DensityConfig {
        self.density.unwrap_or_else(|| self.model.default_density())
    }

    /// The same configuration with every default filled in.
    pub fn resolved(&self) -> Self {
        Self {
            density: Some(self.density_config()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.patch.validate()?;
        if self.model.uses_network() {
            self.train.validate()?;
        }
        if self.model.uses_density() {
            let d = self.density_config();
            d.gmm.validate()?;
            if let Some(r) = d.pca_retain {
                ensure(r > 0.0 && r <= 1.0, || format!("pca_retain must lie in (0, 1], got {r}"))?;
            }
        }
        if self.model == ModelTag::ExternalGmm {
            ensure(self.external.features_dir.is_some(), || {
                "external_gmm needs external.features_dir".into()
            })?;
        }
        Ok(())
    }
}

/// Turns recordings into the base feature sequences of a pipeline.
pub struct Featurizer<T: Scalar> {
    config: PipelineConfig,
    analyzer: MelAnalyzer<T>,
}

impl<T: Scalar> Featurizer<T> {
    pub fn new(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            analyzer: MelAnalyzer::new(config.mel)?,
        })
    }

    /// Normalized Mel patches of a waveform.
    pub fn patches(&self, w: &Waveform<T>, id: &str) -> Result<FeatureSequence<T>> {
        let mel = normalize_01(&self.analyzer.mel_spectrogram(w)?);
        sliding_patches(&mel, &self.config.patch, id)
    }

    pub fn external_path(&self, meta: &RecordingMeta) -> Result<PathBuf> {
        let dir = self
            .config
            .external
            .features_dir
            .as_ref()
            .ok_or_else(|| AsdError::invalid("external.features_dir is not set"))?;
        Ok(dir.join(meta.path.with_extension("fvec")))
    }

    pub fn recording(&self, manifest: &DatasetManifest, meta: &RecordingMeta) -> Result<FeatureSequence<T>> {
        if self.config.model == ModelTag::ExternalGmm {
            let mut seq = read_fvec(&self.external_path(meta)?)?;
            seq.source_id = meta.recording_id.clone();
            Ok(seq)
        } else {
            self.patches(&manifest.load(meta)?, &meta.recording_id)
        }
    }

    /// Features of a standalone file: a WAV, or an FVEC for external pipelines.
    pub fn file(&self, path: &Path) -> Result<FeatureSequence<T>> {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if self.config.model == ModelTag::ExternalGmm {
            let mut seq = read_fvec(path)?;
            seq.source_id = id;
            Ok(seq)
        } else {
            let w = crate::dataset::read_wav(path, Some(self.config.mel.sample_rate))?;
            self.patches(&w, &id)
        }
    }
}

/// A fitted detector. Higher scores mean more anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector<T> {
    pub model: ModelTag,
    pub network: Option<NeuralModel<T>>,
    pub density: Option<DensityModel<T>>,
    pub pooling: Pooling,
    pub seed: u64,
}

fn lamp_mode(tag: ModelTag) -> LampMode {
    if tag == ModelTag::OneLamp {
        LampMode::OneLamp
    } else {
        LampMode::Lamp
    }
}

impl<T: Scalar> Detector<T> {
    /// Fits on normal sequences. Network initialization, batch order and
    /// mixture seeding all derive from `seed`.
    pub fn fit(config: &PipelineConfig, train_set: &[FeatureSequence<T>], seed: u64) -> Result<Self> {
        config.validate()?;
        ensure(!train_set.is_empty(), || "no training recordings".into())?;
        let tag = config.model;
        let train_cfg = TrainConfig {
            seed: mix_seed(seed, "train"),
            ..config.train
        };
        let init = mix_seed(seed, "init");
        let network = if tag.uses_network() {
            let data = stack_vectors(train_set)?;
            Some(match tag {
                ModelTag::Ae | ModelTag::OneLamp | ModelTag::Lamp => {
                    let mut ae = AutoEncoder::seeded(init);
                    train(&mut ae, data.view(), &train_cfg)?;
                    NeuralModel::Ae(ae)
                }
                ModelTag::QLamp => {
                    let mut q = QuantileAutoEncoder::seeded(init);
                    train(&mut q, data.view(), &train_cfg)?;
                    NeuralModel::Quantile(q)
                }
                ModelTag::Rnd => {
                    let mut r = RndPair::seeded(init);
                    train(&mut r, data.view(), &train_cfg)?;
                    NeuralModel::Rnd(r)
                }
                ModelTag::PatchGmm | ModelTag::ExternalGmm => unreachable!(),
            })
        } else {
            None
        };
        let mut detector = Detector {
            model: tag,
            network,
            density: None,
            pooling: config.pooling,
            seed,
        };
        if tag.uses_density() {
            let mut dcfg = config.density_config();
            dcfg.gmm.seed = mix_seed(seed, "gmm");
            let features = train_set.iter().map(|s| detector.density_input(s)).collect::<Result<Vec<_>>>()?;
            detector.density = Some(DensityModel::fit(&features, &dcfg)?.model);
        }
        Ok(detector)
    }

    /// Sequence fed to the mixture: activations for the LAMP family, the
    /// base features otherwise.
    fn density_input(&self, x: &FeatureSequence<T>) -> Result<FeatureSequence<T>> {
        let encoder = match &self.network {
            Some(NeuralModel::Ae(ae)) => &ae.encoder,
            Some(NeuralModel::Quantile(q)) => &q.encoder,
            _ => return Ok(x.clone()),
        };
        let f = encoder_features(encoder, x.vectors.view(), lamp_mode(self.model))?;
        Ok(FeatureSequence {
            vectors: f,
            source_id: x.source_id.clone(),
            extractor_tag: self.model.as_str().to_string(),
        })
    }

    /// Score of every vector in the sequence.
    pub fn vector_scores(&self, x: &FeatureSequence<T>) -> Result<Array1<T>> {
        match (&self.density, &self.network) {
            (Some(d), _) => d.nll_batch(self.density_input(x)?.vectors.view()),
            (None, Some(NeuralModel::Ae(ae))) => ae.mse_batch(x.vectors.view()),
            (None, Some(NeuralModel::Rnd(r))) => r.score_batch(x.vectors.view()),
            _ => Err(AsdError::invalid("detector has nothing to score with")),
        }
    }

    pub fn score(&self, x: &FeatureSequence<T>) -> Result<T> {
        self.score_with(x, self.pooling)
    }

    pub fn score_with(&self, x: &FeatureSequence<T>, pooling: Pooling) -> Result<T> {
        ensure(!x.is_empty(), || "cannot score an empty feature sequence".into())?;
        pool(&self.vector_scores(x)?, pooling)
    }

    pub fn to_doc(&self, config: &PipelineConfig) -> DetectorDoc {
        DetectorDoc {
            model: self.model,
            seed: self.seed,
            pooling: self.pooling,
            pipeline: config.resolved(),
            network: self.network.as_ref().map(|n| {
                let train_cfg = self.model.uses_network().then_some(TrainConfig {
                    seed: mix_seed(self.seed, "train"),
                    ..config.train
                });
                n.to_doc(train_cfg, mix_seed(self.seed, "init"))
            }),
            density: self.density.as_ref().map(DensityModel::to_doc),
        }
    }

    pub fn from_doc(doc: &DetectorDoc) -> Result<Self> {
        let network = doc.network.as_ref().map(NeuralModel::from_doc).transpose()?;
        let density = doc.density.as_ref().map(DensityModel::from_doc).transpose()?;
        ensure(doc.model.uses_network() == network.is_some(), || {
            format!("{} model document has the wrong network section", doc.model)
        })?;
        ensure(doc.model.uses_density() == density.is_some(), || {
            format!("{} model document has the wrong density section", doc.model)
        })?;
        Ok(Detector {
            model: doc.model,
            network,
            density,
            pooling: doc.pooling,
            seed: doc.seed,
        })
    }
}

/// On-disk form of a fitted detector together with the pipeline that
/// produced its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorDoc {
    pub model: ModelTag,
    pub seed: u64,
    pub pooling: Pooling,
    pub pipeline: PipelineConfig,
    pub network: Option<NetworkDoc>,
    pub density: Option<DensityDoc>,
}
