use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{FeatureSource, MetricsRecord};
use crate::data::BatchOrder;
use crate::error::{config_err, shape_err, Error, Result};
use crate::math;
use crate::rng;
use crate::tensor::Mode;

/// Fractions of training at which the classifier learning rate halves.
pub const DEFAULT_MILESTONES: [f32; 7] = [0.20, 0.35, 0.50, 0.60, 0.70, 0.80, 0.90];

/// `initial_lr / 2^m` with `m` the number of milestones at or below `progress`.
pub fn lr_schedule(progress: f32, initial_lr: f32, milestones: &[f32]) -> f32 {
    let m = milestones.iter().filter(|&&t| t <= progress).count() as i32;
    initial_lr * libm::powf(0.5, m as f32)
}

/// Linear softmax classifier on flattened features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub classes: usize,
    pub dim: usize,
    /// `classes x dim`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub dropout: f32,
}

impl ClassifierHead {
    pub fn zeros(classes: usize, dim: usize, dropout: f32) -> Self {
        Self { classes, dim, weights: vec![0.0; classes * dim], bias: vec![0.0; classes], dropout }
    }

    /// Uniform init in `+-1/sqrt(dim)`.
    pub fn init(classes: usize, dim: usize, dropout: f32, seed: u64) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(config_err!("head needs at least 2 classes and 1 feature"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(config_err!("dropout rate must lie in [0, 1), got {dropout}"));
        }
        let mut g = rng::stream(seed, rng::tags::HEAD_INIT, 0);
        let bound = 1.0 / math::sqrt(dim as f32);
        let mut draw = |n: usize| (0..n).map(|_| g.random_range(-bound..bound)).collect::<Vec<f32>>();
        let weights = draw(classes * dim);
        let bias = draw(classes);
        Ok(Self { classes, dim, weights, bias, dropout })
    }

    /// `W x + b` for a batch of row-major feature vectors.
    pub fn logits(&self, features: &[f32]) -> Result<Vec<f32>> {
        if !features.len().is_multiple_of(self.dim) {
            return Err(shape_err!("{} values are not rows of {} features", features.len(), self.dim));
        }
        let b = features.len() / self.dim;
        let mut out = Vec::with_capacity(b * self.classes);
        for _ in 0..b {
            out.extend_from_slice(&self.bias);
        }
        math::gemm(b, self.dim, self.classes, 1.0, features, false, &self.weights, true, 1.0, &mut out);
        Ok(out)
    }

    /// Inverted dropout on `features`: kept values are scaled by `1/(1-rate)`.
    pub fn dropout_in_place<R: rand::Rng + ?Sized>(&self, features: &mut [f32], rng: &mut R) {
        if self.dropout <= 0.0 {
            return;
        }
        let keep = 1.0 - self.dropout;
        let scale = 1.0 / keep;
        for v in features.iter_mut() {
            *v = if rng.random::<f32>() < keep { *v * scale } else { 0.0 };
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

fn log_softmax_rows(logits: &mut [f32], classes: usize) {
    for row in logits.chunks_mut(classes) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = max + math::ln(row.iter().map(|&v| math::exp(v - max)).sum::<f32>());
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
}

/// Class log-probabilities. Train mode applies dropout to a copy of the
/// features first.
pub fn classifier_forward<R: rand::Rng + ?Sized>(
    features: &[f32],
    head: &ClassifierHead,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f32>> {
    let mut logits = match mode {
        Mode::Eval => head.logits(features)?,
        Mode::Train => {
            let mut x = features.to_vec();
            head.dropout_in_place(&mut x, rng);
            head.logits(&x)?
        }
    };
    log_softmax_rows(&mut logits, head.classes);
    Ok(logits)
}

/// Gradients of the batch-mean cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub loss: f32,
    /// Correct top-1 predictions in the batch.
    pub correct: usize,
}

/// Analytic gradient `(softmax(Wx+b) - onehot(y))^T x`, averaged over the batch.
pub fn classifier_backward(features: &[f32], labels: &[u16], head: &ClassifierHead) -> Result<HeadGradients> {
    let b = labels.len();
    if features.len() != b * head.dim {
        return Err(shape_err!("{} feature values for {b} labels of width {}", features.len(), head.dim));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= head.classes) {
        return Err(config_err!("label {l} outside [0, {})", head.classes));
    }
    let k = head.classes;
    let mut p = head.logits(features)?;
    log_softmax_rows(&mut p, k);
    let mut loss = 0.0f64;
    let mut correct = 0;
    let inv_b = 1.0 / b.max(1) as f32;
    let mut bias = vec![0.0f32; k];
    for (row, &y) in p.chunks_mut(k).zip(labels) {
        loss -= row[y as usize] as f64;
        if crate::plasticity::winner(row) == y as usize {
            correct += 1;
        }
        for (j, v) in row.iter_mut().enumerate() {
            *v = (math::exp(*v) - if j == y as usize { 1.0 } else { 0.0 }) * inv_b;
            bias[j] += *v;
        }
    }
    let mut weights = vec![0.0f32; k * head.dim];
    math::gemm(k, b, head.dim, 1.0, &p, true, features, false, 0.0, &mut weights);
    Ok(HeadGradients { weights, bias, loss: (loss / b.max(1) as f64) as f32, correct })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f32, beta2: f32, eps: f32 },
    Sgd { momentum: f32 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment state shared by both optimizers (SGD uses only the first).
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

/// Parameter update rule of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    w: Moments,
    b: Moments,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, head: &ClassifierHead) -> Self {
        let state = |n: usize| Moments { m: vec![0.0; n], v: vec![0.0; n], t: 0 };
        Self { kind, w: state(head.weights.len()), b: state(head.bias.len()) }
    }

    pub fn step(&mut self, head: &mut ClassifierHead, grads: &HeadGradients, lr: f32) {
        let kind = self.kind;
        update(kind, &mut self.w, &mut head.weights, &grads.weights, lr);
        update(kind, &mut self.b, &mut head.bias, &grads.bias, lr);
    }
}

fn update(kind: OptimizerKind, s: &mut Moments, params: &mut [f32], grads: &[f32], lr: f32) {
    s.t += 1;
    match kind {
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - libm::powf(beta1, s.t as f32);
            let c2 = 1.0 - libm::powf(beta2, s.t as f32);
            let step = lr / c1;
            for i in 0..params.len() {
                let g = grads[i];
                s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g;
                s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g * g;
                params[i] -= step * s.m[i] / (math::sqrt(s.v[i] / c2) + eps);
            }
        }
        OptimizerKind::Sgd { momentum } => {
            for i in 0..params.len() {
                s.m[i] = momentum * s.m[i] + grads[i];
                params[i] -= lr * s.m[i];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f32,
    pub milestones: Vec<f32>,
    pub optimizer: OptimizerKind,
    pub dropout: f32,
    pub seed: u64,
}

impl Default for SupervisedRunConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            initial_lr: 0.001,
            milestones: DEFAULT_MILESTONES.to_vec(),
            optimizer: OptimizerKind::default(),
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl SupervisedRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err!("epochs and batch size must be at least 1"));
        }
        if !(self.initial_lr > 0.0) {
            return Err(config_err!("initial learning rate must be positive"));
        }
        let ordered = self.milestones.windows(2).all(|w| w[0] < w[1]);
        if !ordered || self.milestones.iter().any(|&m| !(m > 0.0 && m < 1.0)) {
            return Err(config_err!("milestones must be strictly increasing inside (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err!("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f32,
    pub loss: f32,
    pub train_acc: f32,
    pub val_acc: Option<f32>,
}

impl EpochMetrics {
    pub fn record(&self, layer: usize) -> MetricsRecord {
        MetricsRecord {
            step: self.epoch,
            layer,
            lr: Some(self.lr),
            loss: Some(self.loss),
            train_acc: Some(self.train_acc),
            val_acc: self.val_acc,
            ..MetricsRecord::default()
        }
    }
}

/// Mini-batch training of a fresh head with the milestone schedule.
pub fn train_classifier(
    train: &dyn FeatureSource,
    val: Option<&dyn FeatureSource>,
    cfg: &SupervisedRunConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<(ClassifierHead, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(config_err!("classifier training set is empty"));
    }
    let dim = train.dim();
    let mut head = ClassifierHead::init(train.num_classes(), dim, cfg.dropout, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, &head);
    let mut buf = vec![0.0f32; cfg.batch_size * dim];
    let mut labels = vec![0u16; cfg.batch_size];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch as f32 / cfg.epochs as f32, cfg.initial_lr, &cfg.milestones);
        let mut drop_rng = rng::stream(cfg.seed, rng::tags::DROPOUT, epoch as u64);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for idx in BatchOrder::new(train.len(), cfg.batch_size, cfg.seed, epoch as u64)? {
            let b = idx.len();
            let x = &mut buf[..b * dim];
            train.fill_batch(&idx, x, &mut labels[..b]);
            head.dropout_in_place(x, &mut drop_rng);
            let g = classifier_backward(x, &labels[..b], &head)?;
            if !g.loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += g.loss as f64 * b as f64;
            correct += g.correct;
            opt.step(&mut head, &g, lr);
        }
        if !head.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr,
            loss: (loss_sum / train.len() as f64) as f32,
            train_acc: correct as f32 / train.len() as f32,
            val_acc: match val {
                Some(v) if !v.is_empty() => Some(evaluate(&head, v)?.accuracy),
                _ => None,
            },
        };
        on_epoch(&m);
        history.push(m);
    }
    Ok((head, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f32,
    /// Accuracy per class (NaN for classes absent from the split).
    pub per_class: Vec<f32>,
    pub count: usize,
}

/// Top-1 accuracy without dropout.
pub fn evaluate(head: &ClassifierHead, data: &dyn FeatureSource) -> Result<EvalReport> {
    if data.dim() != head.dim {
        return Err(shape_err!("features have width {}, head expects {}", data.dim(), head.dim));
    }
    let k = head.classes;
    let bs = 256;
    let mut buf = vec![0.0f32; bs * head.dim];
    let mut labels = vec![0u16; bs];
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for idx in BatchOrder::sequential(data.len(), bs)? {
        let b = idx.len();
        data.fill_batch(&idx, &mut buf[..b * head.dim], &mut labels[..b]);
        let logits = head.logits(&buf[..b * head.dim])?;
        for (row, &y) in logits.chunks(k).zip(&labels[..b]) {
            let y = y as usize;
            if y < k {
                totals[y] += 1;
                if crate::plasticity::winner(row) == y {
                    hits[y] += 1;
                }
            }
        }
    }
    let n: usize = totals.iter().sum();
    Ok(EvalReport {
        accuracy: if n == 0 { 0.0 } else { hits.iter().sum::<usize>() as f32 / n as f32 },
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| if t == 0 { f32::NAN } else { h as f32 / t as f32 })
            .collect(),
        count: n,
    })
}
