//! Run configuration (JSON) and the shipped presets.

use std::path::{Path, PathBuf};

use hebbnet_core::activation::ActivationSpec;
use hebbnet_core::data::AugmentFlags;
use hebbnet_core::network::{build_architecture, build_fully_connected, ArchitectureRequest, LayerHyper};
use hebbnet_core::plasticity::{Aggregation, InitSpec, PlasticityConfig, PlasticityMode};
use hebbnet_core::training::{SupervisedRunConfig, UnsupervisedRunConfig};
use hebbnet_core::ArchitectureSpec;
use serde::{Deserialize, Serialize};

use crate::datasets::DatasetKind;
use crate::error::{config_err, Error, Result};

pub const PRESETS: [&str; 3] = ["table-a2-mnist", "table-a2-cifar", "fc-mnist-2000"];

/// How the hidden layers are laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchitectureConfig {
    Convolutional {
        first_width: usize,
        width_factor: usize,
        /// Cap on depth; the stop rule decides when absent.
        #[serde(default)]
        max_layers: Option<usize>,
        #[serde(default = "default_stop_resolution")]
        stop_resolution: usize,
        /// Per-layer settings; missing layers use the tuned defaults.
        #[serde(default)]
        layers: Vec<LayerHyper>,
    },
    FullyConnected {
        width: usize,
        plasticity: PlasticityConfig,
        activation: ActivationSpec,
        init: InitSpec,
    },
}

fn default_stop_resolution() -> usize {
    ArchitectureRequest::DEFAULT_STOP_RESOLUTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Dataset directory; defaults to the dataset's folder below the data root.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    pub architecture: ArchitectureConfig,
    /// Overrides the plasticity mode of every layer.
    #[serde(default)]
    pub plasticity_mode: Option<PlasticityMode>,
    /// Skip plasticity and probe the randomly initialized network.
    #[serde(default)]
    pub untrained: bool,
    #[serde(default)]
    pub unsupervised: UnsupervisedRunConfig,
    #[serde(default)]
    pub supervised: SupervisedRunConfig,
    /// Fraction of the training split held out for validation.
    #[serde(default)]
    pub validation_fraction: f32,
    /// Depths (1-based) that get a linear probe; empty means the full depth.
    #[serde(default)]
    pub probe_layers: Vec<usize>,
    #[serde(default)]
    pub augment: AugmentFlags,
    /// Use only the first items of each split.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_feature_batch")]
    pub feature_batch: usize,
}

fn default_feature_batch() -> usize {
    100
}

impl RunConfig {
    pub fn new(dataset: DatasetKind, architecture: ArchitectureConfig) -> Self {
        Self {
            dataset,
            data_dir: None,
            architecture,
            plasticity_mode: None,
            untrained: false,
            unsupervised: UnsupervisedRunConfig::default(),
            supervised: SupervisedRunConfig::default(),
            validation_fraction: 0.0,
            probe_layers: Vec::new(),
            augment: AugmentFlags::default(),
            train_limit: None,
            test_limit: None,
            seed: 0,
            deterministic: false,
            threads: None,
            feature_batch: default_feature_batch(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let conv = |first_width| ArchitectureConfig::Convolutional {
            first_width,
            width_factor: 4,
            max_layers: None,
            stop_resolution: default_stop_resolution(),
            layers: (0..3).map(LayerHyper::cifar_default).collect(),
        };
        match name {
            "table-a2-cifar" => Ok(Self::new(DatasetKind::Cifar10, conv(96))),
            "table-a2-mnist" => Ok(Self::new(DatasetKind::Mnist, conv(96))),
            "fc-mnist-2000" => {
                let mut cfg = Self::new(DatasetKind::Mnist, fc_mnist(2000));
                cfg.supervised.dropout = 0.0;
                Ok(cfg)
            }
            other => Err(config_err!("unknown preset {other:?}; available: {}", PRESETS.join(", "))),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| config_err!("{}: {e}", path.display()))
    }

    pub fn input_geometry(&self) -> (usize, usize) {
        match self.dataset {
            DatasetKind::Mnist => (28, 1),
            DatasetKind::Cifar10 => (32, 3),
        }
    }

    pub fn build_architecture(&self) -> Result<ArchitectureSpec> {
        let (size, channels) = self.input_geometry();
        let mut arch = match &self.architecture {
            ArchitectureConfig::Convolutional { first_width, width_factor, max_layers, stop_resolution, layers } => {
                let mut req = ArchitectureRequest::new(size, channels, *first_width, *width_factor);
                req.hyper = layers.clone();
                req.max_layers = *max_layers;
                req.stop_resolution = *stop_resolution;
                build_architecture(&req)?
            }
            ArchitectureConfig::FullyConnected { width, plasticity, activation, init } => {
                build_fully_connected(size, channels, *width, *plasticity, *activation, *init)?
            }
        };
        if let Some(mode) = self.plasticity_mode {
            for l in &mut arch.layers {
                l.plasticity.mode = mode;
            }
        }
        arch.validate()?;
        Ok(arch)
    }

    /// Probe depths, validated against `depth`.
    pub fn probe_depths(&self, depth: usize) -> Result<Vec<usize>> {
        if self.probe_layers.is_empty() {
            return Ok(vec![depth]);
        }
        if let Some(bad) = self.probe_layers.iter().find(|&&d| d == 0 || d > depth) {
            return Err(config_err!("probe depth {bad} outside 1..={depth}"));
        }
        let mut d = self.probe_layers.clone();
        d.sort_unstable();
        d.dedup();
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.unsupervised.validate()?;
        self.supervised.validate()?;
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(config_err!("validation fraction must lie in [0, 1)"));
        }
        if self.feature_batch == 0 {
            return Err(config_err!("feature batch must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(config_err!("thread count must be at least 1"));
        }
        let arch = self.build_architecture()?;
        self.probe_depths(arch.depth())?;
        Ok(())
    }
}

const FC_INIT_RADIUS: f32 = 25.0;

/// One hidden layer of `width` neurons over the whole 28x28 image.
pub fn fc_mnist(width: usize) -> ArchitectureConfig {
    ArchitectureConfig::FullyConnected {
        width,
        plasticity: PlasticityConfig { aggregation: Aggregation::MaxAbs, ..PlasticityConfig::new(1.0, 0.08, 0.5) },
        activation: ActivationSpec::Triangle { power: 0.7 },
        init: InitSpec::normal(FC_INIT_RADIUS),
    }
}
