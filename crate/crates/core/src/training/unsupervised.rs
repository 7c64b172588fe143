use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::MetricsRecord;
use crate::analysis::{r1_fraction, DEFAULT_R1_TOLERANCE};
use crate::data::{BatchOrder, Dataset};
use crate::error::{config_err, Error, Result};
use crate::network::{Layer, Model};
use crate::tensor::Tensor;

/// Whether layers are trained one after another on frozen predecessors, or
/// all at once with every batch passing through the whole stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerOrder {
    #[default]
    SequentialFrozen,
    Simultaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsupervisedRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Cap on plasticity updates per layer.
    pub max_iterations: Option<usize>,
    pub order: LayerOrder,
    pub seed: u64,
    /// Emit a metrics row every this many updates (and after the last one).
    pub metrics_every: usize,
    pub r1_tolerance: f32,
    /// Layers (0-based) to train; `None` trains all of them.
    pub layers: Option<Vec<usize>>,
}

impl Default for UnsupervisedRunConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 10,
            max_iterations: None,
            order: LayerOrder::SequentialFrozen,
            seed: 0,
            metrics_every: 100,
            r1_tolerance: DEFAULT_R1_TOLERANCE,
            layers: None,
        }
    }
}

impl UnsupervisedRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be at least 1"));
        }
        if self.metrics_every == 0 {
            return Err(config_err!("metrics interval must be at least 1"));
        }
        if !(self.r1_tolerance > 0.0) {
            return Err(config_err!("R1 tolerance must be positive"));
        }
        Ok(())
    }

    fn trains(&self, layer: usize) -> bool {
        self.layers.as_ref().is_none_or(|l| l.contains(&layer))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsupervisedReport {
    /// Updates applied to each layer.
    pub steps: Vec<usize>,
    pub final_r1: Vec<f32>,
    pub final_mean_radius: Vec<f32>,
}

fn layer_record(layer: &Layer, index: usize, step: usize, tol: f32) -> MetricsRecord {
    let cfg = &layer.spec.plasticity;
    let radii = layer.bank.radii();
    let lr = radii.iter().map(|&r| cfg.neuron_lr(r, step) as f64).sum::<f64>() / radii.len() as f64;
    MetricsRecord {
        step,
        layer: index + 1,
        mean_radius: Some(layer.bank.mean_radius()),
        r1_fraction: Some(r1_fraction(radii, tol)),
        lr: Some(lr as f32),
        ..MetricsRecord::default()
    }
}

fn tag_layer(e: Error, layer: usize) -> Error {
    match e {
        Error::NonFinite { step, .. } => Error::NonFinite { layer: layer + 1, step },
        e => e,
    }
}

/// One epoch-limited pass of SoftHebb plasticity over the dataset, greedily
/// (each layer trained and frozen before the next) or simultaneously.
pub fn train_unsupervised(
    model: &mut Model,
    data: &Dataset,
    cfg: &UnsupervisedRunConfig,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<UnsupervisedReport> {
    cfg.validate()?;
    let depth = model.depth();
    let mut steps = alloc::vec![0usize; depth];
    if !data.is_empty() {
        match cfg.order {
            LayerOrder::SequentialFrozen => {
                for l in (0..depth).filter(|&l| cfg.trains(l)) {
                    steps[l] = train_one_layer(model, l, data, cfg, sink)?;
                }
            }
            LayerOrder::Simultaneous => train_simultaneous(model, data, cfg, sink, &mut steps)?,
        }
    }
    Ok(UnsupervisedReport {
        steps,
        final_r1: model.layers.iter().map(|l| r1_fraction(l.bank.radii(), cfg.r1_tolerance)).collect(),
        final_mean_radius: model.layers.iter().map(|l| l.bank.mean_radius()).collect(),
    })
}

fn train_one_layer(
    model: &mut Model,
    l: usize,
    data: &Dataset,
    cfg: &UnsupervisedRunConfig,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<usize> {
    let (frozen, rest) = model.layers.split_at_mut(l);
    let layer = &mut rest[0];
    let cap = cfg.max_iterations.unwrap_or(usize::MAX);
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        for idx in BatchOrder::new(data.len(), cfg.batch_size, cfg.seed, epoch as u64)? {
            if step >= cap {
                break 'epochs;
            }
            let (mut x, _) = data.batch(&idx);
            for f in frozen.iter() {
                x = f.forward(&x)?;
            }
            layer.train_step(&x, step).map_err(|e| tag_layer(e, l))?;
            step += 1;
            if step % cfg.metrics_every == 0 {
                sink(&layer_record(layer, l, step, cfg.r1_tolerance));
            }
        }
    }
    if step % cfg.metrics_every != 0 {
        sink(&layer_record(layer, l, step, cfg.r1_tolerance));
    }
    Ok(step)
}

fn train_simultaneous(
    model: &mut Model,
    data: &Dataset,
    cfg: &UnsupervisedRunConfig,
    sink: &mut dyn FnMut(&MetricsRecord),
    steps: &mut [usize],
) -> Result<()> {
    let cap = cfg.max_iterations.unwrap_or(usize::MAX);
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        for idx in BatchOrder::new(data.len(), cfg.batch_size, cfg.seed, epoch as u64)? {
            if step >= cap {
                break 'epochs;
            }
            let (mut x, _) = data.batch(&idx);
            for (l, layer) in model.layers.iter_mut().enumerate() {
                x = if cfg.trains(l) {
                    let (fwd, _) = layer.train_step(&x, step).map_err(|e| tag_layer(e, l))?;
                    steps[l] += 1;
                    layer.forward_normalized(&fwd.normalized)?
                } else {
                    layer.forward(&x)?
                };
            }
            step += 1;
            if step % cfg.metrics_every == 0 {
                for (l, layer) in model.layers.iter().enumerate().filter(|(l, _)| cfg.trains(*l)) {
                    sink(&layer_record(layer, l, step, cfg.r1_tolerance));
                }
            }
        }
    }
    if step % cfg.metrics_every != 0 {
        for (l, layer) in model.layers.iter().enumerate().filter(|(l, _)| cfg.trains(*l)) {
            sink(&layer_record(layer, l, step, cfg.r1_tolerance));
        }
    }
    Ok(())
}

/// Fills batch-norm running statistics without any plasticity (used for
/// untrained baselines). Layers are calibrated in order on the eval-mode
/// output of the already calibrated ones.
pub fn calibrate_batch_norm(
    model: &mut Model,
    data: &Dataset,
    batch_size: usize,
    max_batches: Option<usize>,
    seed: u64,
) -> Result<()> {
    for l in 0..model.depth() {
        let (done, rest) = model.layers.split_at_mut(l);
        let layer = &mut rest[0];
        for idx in BatchOrder::new(data.len(), batch_size, seed, 0)?.take(max_batches.unwrap_or(usize::MAX)) {
            let (mut x, _): (Tensor, _) = data.batch(&idx);
            for f in done.iter() {
                x = f.forward(&x)?;
            }
            layer.bn.normalize_train(&x)?;
        }
    }
    Ok(())
}
