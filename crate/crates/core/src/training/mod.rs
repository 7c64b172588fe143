//! Greedy unsupervised training, the supervised linear head and evaluation.

mod classifier;
mod unsupervised;

pub use classifier::{
    classifier_backward, classifier_forward, evaluate, lr_schedule, train_classifier, ClassifierHead, EpochMetrics,
    EvalReport, HeadGradients, Optimizer, OptimizerKind, SupervisedRunConfig, DEFAULT_MILESTONES,
};
pub use unsupervised::{
    calibrate_batch_norm, train_unsupervised, LayerOrder, UnsupervisedReport, UnsupervisedRunConfig,
};

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{BatchOrder, Dataset};
use crate::error::{config_err, Result};
use crate::network::Model;

/// One row of the metrics stream. Unsupervised steps fill the radius and R1
/// columns, classifier epochs fill the loss and accuracy columns.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    /// 1-based layer index (the probed depth for classifier rows).
    pub layer: usize,
    pub mean_radius: Option<f32>,
    pub r1_fraction: Option<f32>,
    pub lr: Option<f32>,
    pub loss: Option<f32>,
    pub train_acc: Option<f32>,
    pub val_acc: Option<f32>,
}

/// Labelled fixed-width feature vectors, read in mini-batches.
pub trait FeatureSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Writes the features of `indices` row by row into `out`
    /// (`indices.len() * dim` values) and their labels into `labels`.
    fn fill_batch(&self, indices: &[usize], out: &mut [f32], labels: &mut [u16]);
}

/// Features held as a dense `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f32>,
    pub dim: usize,
    pub labels: Vec<u16>,
    pub num_classes: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f32>, dim: usize, labels: Vec<u16>, num_classes: usize) -> Result<Self> {
        if dim == 0 || data.len() != labels.len() * dim {
            return Err(config_err!("{} values do not hold {} rows of width {dim}", data.len(), labels.len()));
        }
        Ok(Self { data, dim, labels, num_classes })
    }

    /// Eval-mode features of every item after `depth` layers.
    pub fn extract(model: &Model, data: &Dataset, depth: usize, batch_size: usize) -> Result<Self> {
        let labels = data.labels().ok_or_else(|| config_err!("feature extraction for a head needs labels"))?.to_vec();
        let dim = model.feature_dim(depth)?;
        let mut out = vec![0.0f32; data.len() * dim];
        for idx in BatchOrder::sequential(data.len(), batch_size)? {
            let (x, _) = data.batch(&idx);
            let f = model.forward(&x, depth)?;
            out[idx[0] * dim..(idx[0] + idx.len()) * dim].copy_from_slice(f.data());
        }
        Self::new(out, dim, labels, data.num_classes())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

impl FeatureSource for FeatureMatrix {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn fill_batch(&self, indices: &[usize], out: &mut [f32], labels: &mut [u16]) {
        for (j, &i) in indices.iter().enumerate() {
            out[j * self.dim..(j + 1) * self.dim].copy_from_slice(self.row(i));
            labels[j] = self.labels[i];
        }
    }
}
