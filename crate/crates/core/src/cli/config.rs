use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{GeometryId, StftConfig};
use crate::error::{Error, Result};
use crate::neural::{BinSelection, LossKind, ModelConfig, ModelKind, TrainConfig};
use crate::sim::SimConfig;
use crate::subspace::Method;

pub const CONFIG_VERSION: u32 = 1;

/// Experiment file: one dataset recipe, shared feature and training
/// settings, and a list of table rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub simulate: SimConfig,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<ExperimentSpec>,
}

impl Default for ExperimentFile {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: None,
            simulate: SimConfig::default(),
            features: FeatureSection::default(),
            train: TrainConfig::default(),
            estimate: EstimateSection::default(),
            experiments: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub stft: StftConfig,
    pub bins: BinSelection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub chunk_ms: f64,
    pub overlap: f64,
    /// Analysis band of the subspace methods.
    pub band_hz: [f64; 2],
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            chunk_ms: 100.0,
            overlap: 0.5,
            band_hz: [
                crate::subspace::DEFAULT_BAND_HZ.0,
                crate::subspace::DEFAULT_BAND_HZ.1,
            ],
        }
    }
}

/// What a table row runs: a network or a subspace baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Network(ModelKind),
    Subspace(Method),
}

impl Estimator {
    pub fn parse(s: &str) -> Result<Self> {
        s.parse::<ModelKind>()
            .map(Estimator::Network)
            .or_else(|_| s.parse::<Method>().map(Estimator::Subspace))
            .map_err(|_| Error::Config(format!("unknown model or method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// `mlc`, `mask_split`, `map_split_c`, `map_split_r`, `music`,
    /// `music_nam` or `tops`.
    pub model: String,
    pub gamma: u32,
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub pit: bool,
    #[serde(default)]
    pub predictor_sharing: Option<bool>,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub lstm_cells: Option<usize>,
    #[serde(default)]
    pub projection: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub chunked: bool,
}

impl ExperimentSpec {
    pub fn estimator(&self) -> Result<Estimator> {
        Estimator::parse(&self.model)
    }

    pub fn loss(&self, kind: ModelKind) -> LossKind {
        self.loss.unwrap_or(if kind.is_splitting() {
            LossKind::Semd
        } else {
            LossKind::Bce
        })
    }

    pub fn model_config(&self, file: &ExperimentFile, geometry: GeometryId) -> Result<ModelConfig> {
        let Estimator::Network(kind) = self.estimator()? else {
            return Err(Error::Config(format!("'{}' is not a network", self.name)));
        };
        let mut c = ModelConfig::new(kind, self.gamma, geometry);
        c.n_sources = file.simulate.n_sources;
        c.hidden = self.hidden;
        c.predictor_sharing = self.predictor_sharing;
        c.lstm_cells = self.lstm_cells;
        c.projection = self.projection;
        c.stft = file.features.stft;
        c.bins = file.features.bins;
        c.validate()
            .map_err(|e| Error::Config(format!("{}: {e}", self.name)))?;
        Ok(c)
    }

    pub fn train_config(&self, file: &ExperimentFile, kind: ModelKind, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(file.train.epochs),
            loss: self.loss(kind),
            pit: self.pit,
            seed,
            ..file.train.clone()
        }
    }
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: Self = toml::from_str(text)
            .map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        if f.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                f.version
            )));
        }
        f.simulate
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        f.train.validate()?;
        let mut names = std::collections::BTreeSet::new();
        for e in &f.experiments {
            e.estimator()?;
            if !names.insert(e.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate experiment name '{}'",
                    e.name
                )));
            }
            if e.name.is_empty() || e.name.contains(['/', '\\']) {
                return Err(Error::Config(format!(
                    "invalid experiment name '{}'",
                    e.name
                )));
            }
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Config(format!("cannot read {}: {e}", path.display())),
        })?;
        Self::parse(&text)
    }
}
