//! SoftHebb plasticity: weight initialization, soft and hard competition,
//! the Hebbian / soft anti-Hebbian deltas and the norm-adaptive learning rate.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::math;
use crate::tensor::PatchMatrix;

/// Receptive field of one neuron: `channels x kernel x kernel` synapses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelGeometry {
    pub channels: usize,
    pub kernel: usize,
}

impl KernelGeometry {
    pub const fn new(channels: usize, kernel: usize) -> Self {
        Self { channels, kernel }
    }

    pub const fn synapses(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// A layer's `K x D` weight matrix with cached row norms.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBank {
    geometry: KernelGeometry,
    neurons: usize,
    weights: Vec<f32>,
    radii: Vec<f32>,
}

impl NeuronBank {
    pub fn from_weights(geometry: KernelGeometry, weights: Vec<f32>) -> Result<Self> {
        let d = geometry.synapses();
        if d == 0 || weights.is_empty() || !weights.len().is_multiple_of(d) {
            return Err(shape_err!("{} weights do not form rows of {d} synapses", weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(config_err!("weights must be finite"));
        }
        let mut bank = Self { geometry, neurons: weights.len() / d, weights, radii: Vec::new() };
        bank.refresh_radii();
        Ok(bank)
    }

    pub fn geometry(&self) -> KernelGeometry {
        self.geometry
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn synapses(&self) -> usize {
        self.geometry.synapses()
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn row(&self, k: usize) -> &[f32] {
        let d = self.synapses();
        &self.weights[k * d..(k + 1) * d]
    }

    pub fn radii(&self) -> &[f32] {
        &self.radii
    }

    pub fn mean_radius(&self) -> f32 {
        self.radii.iter().map(|&r| r as f64).sum::<f64>() as f32 / self.neurons as f32
    }

    pub fn into_weights(self) -> Vec<f32> {
        self.weights
    }

    /// Adds `delta` (same layout as the weights). Rejects the update, leaving
    /// the bank untouched, if any resulting weight is not finite.
    pub fn apply_delta(&mut self, delta: &[f32]) -> Result<()> {
        if delta.len() != self.weights.len() {
            return Err(shape_err!("delta has {} values, bank has {}", delta.len(), self.weights.len()));
        }
        if self.weights.iter().zip(delta).any(|(w, d)| !(w + d).is_finite()) {
            return Err(Error::NonFinite { layer: 0, step: 0 });
        }
        for (w, d) in self.weights.iter_mut().zip(delta) {
            *w += d;
        }
        self.refresh_radii();
        Ok(())
    }

    fn refresh_radii(&mut self) {
        let d = self.synapses();
        self.radii = self.weights.chunks(d).map(row_norm).collect();
    }
}

fn row_norm(row: &[f32]) -> f32 {
    libm::sqrt(row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()) as f32
}

/// Distribution family of the initial weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitFamily {
    Normal,
    PositiveUniform,
    NegativeUniform,
}

/// Initial weights, parametrized by the expected row norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub family: InitFamily,
    pub target_radius: f32,
}

impl InitSpec {
    pub const fn normal(target_radius: f32) -> Self {
        Self { family: InitFamily::Normal, target_radius }
    }

    /// Standard deviation of the normal family for `synapses` inputs.
    pub fn normal_sigma(&self, synapses: usize) -> f32 {
        self.target_radius * math::sqrt(core::f32::consts::PI / (2.0 * synapses as f32))
    }

    /// Width of the uniform families for `synapses` inputs.
    pub fn uniform_range(&self, synapses: usize) -> f32 {
        self.target_radius * math::sqrt(2.0 / synapses as f32)
    }
}

/// Draws a bank of `neurons` rows whose expected radius is `spec.target_radius`.
pub fn init_weights<R: rand::Rng + ?Sized>(
    neurons: usize,
    geometry: KernelGeometry,
    spec: &InitSpec,
    rng: &mut R,
) -> Result<NeuronBank> {
    let d = geometry.synapses();
    if neurons == 0 || d == 0 {
        return Err(config_err!("need at least one neuron and one synapse (got {neurons} x {d})"));
    }
    if !(spec.target_radius > 0.0) || !spec.target_radius.is_finite() {
        return Err(config_err!("initial radius must be positive, got {}", spec.target_radius));
    }
    let n = neurons * d;
    let weights: Vec<f32> = match spec.family {
        InitFamily::Normal => {
            let sigma = spec.normal_sigma(d);
            (0..n).map(|_| sigma * <StandardNormal as Distribution<f32>>::sample(&StandardNormal, rng)).collect()
        }
        InitFamily::PositiveUniform => {
            let range = spec.uniform_range(d);
            (0..n).map(|_| range * rng.random::<f32>()).collect()
        }
        InitFamily::NegativeUniform => {
            let range = spec.uniform_range(d);
            (0..n).map(|_| -range * rng.random::<f32>()).collect()
        }
    };
    NeuronBank::from_weights(geometry, weights)
}

/// Softmax of `u * inv_temp`, written into `y`.
pub fn soft_competition_into(u: &[f32], inv_temp: f32, y: &mut [f32]) {
    let max = u.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (o, &v) in y.iter_mut().zip(u) {
        *o = math::exp((v - max) * inv_temp);
        sum += *o;
    }
    let inv = 1.0 / sum;
    for o in y.iter_mut() {
        *o *= inv;
    }
}

pub fn soft_competition(u: &[f32], inv_temp: f32) -> Vec<f32> {
    let mut y = vec![0.0; u.len()];
    soft_competition_into(u, inv_temp, &mut y);
    y
}

/// Index of the largest value, lowest index on ties.
pub fn winner(u: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in u.iter().enumerate().skip(1) {
        if v > u[best] {
            best = i;
        }
    }
    best
}

pub fn hard_competition_into(u: &[f32], y: &mut [f32]) {
    y.fill(0.0);
    if !u.is_empty() {
        y[winner(u)] = 1.0;
    }
}

pub fn hard_competition(u: &[f32]) -> Vec<f32> {
    let mut y = vec![0.0; u.len()];
    hard_competition_into(u, &mut y);
    y
}

/// Single-neuron SoftHebb update `lr * y * (x - u * w)`.
pub fn softhebb_delta(x: &[f32], u: f32, y: f32, w: &[f32], lr: f32) -> Vec<f32> {
    let g = lr * y;
    x.iter().zip(w).map(|(&xi, &wi)| g * (xi - u * wi)).collect()
}

/// Per-neuron deltas for one patch with the soft anti-Hebbian sign rule:
/// the neuron with the largest `u` keeps its Hebbian delta, all others get
/// it negated. Rows follow the layout of `weights`.
pub fn anti_hebbian_deltas(x: &[f32], u: &[f32], y: &[f32], weights: &[f32], lrs: &[f32]) -> Vec<f32> {
    let d = x.len();
    let win = winner(u);
    let mut out = Vec::with_capacity(weights.len());
    for k in 0..u.len() {
        let sign = if k == win { 1.0 } else { -1.0 };
        out.extend(softhebb_delta(x, u[k], y[k], &weights[k * d..(k + 1) * d], sign * lrs[k]));
    }
    out
}

/// Norm-adaptive rate `eta * |r - 1|^q`.
pub fn adaptive_lr(radius: f32, base_lr: f32, power: f32) -> f32 {
    base_lr * math::powf((radius - 1.0).abs(), power)
}

/// Competition and sign rule used to weight each neuron's Hebbian term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlasticityMode {
    SoftHebbian,
    SoftAntiHebbian,
    HardWta,
}

/// Reduction of per-patch deltas within a mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Sum,
    /// Sum rescaled so that the largest synapse change of the bank is 1
    /// before the per-neuron rate is applied.
    MaxAbs,
}

/// How each neuron's learning rate is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRateRule {
    /// `eta * |r_i - 1|^q` per neuron.
    NormAdaptive,
    /// `eta * (1 - t / total_steps)` shared by all neurons.
    LinearDecay { total_steps: usize },
}

/// Whether the patches of a mini-batch update the weights together or one
/// after another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    Batched,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlasticityConfig {
    pub inverse_temperature: f32,
    pub base_lr: f32,
    pub lr_power: f32,
    pub mode: PlasticityMode,
    pub aggregation: Aggregation,
    pub lr_rule: LearningRateRule,
    pub update_order: UpdateOrder,
}

impl PlasticityConfig {
    pub fn new(inverse_temperature: f32, base_lr: f32, lr_power: f32) -> Self {
        Self {
            inverse_temperature,
            base_lr,
            lr_power,
            mode: PlasticityMode::SoftAntiHebbian,
            aggregation: Aggregation::Mean,
            lr_rule: LearningRateRule::NormAdaptive,
            update_order: UpdateOrder::Batched,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inverse_temperature > 0.0) || !self.inverse_temperature.is_finite() {
            return Err(config_err!(
                "inverse temperature must be finite and positive, got {}",
                self.inverse_temperature
            ));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(config_err!("learning rate must be finite and positive, got {}", self.base_lr));
        }
        if !(self.lr_power > 0.0 && self.lr_power <= 1.0) {
            return Err(config_err!("learning-rate power must lie in (0, 1], got {}", self.lr_power));
        }
        if let LearningRateRule::LinearDecay { total_steps: 0 } = self.lr_rule {
            return Err(config_err!("linear decay needs at least one step"));
        }
        Ok(())
    }

    /// Learning rate of a neuron with radius `radius` at update `step`.
    pub fn neuron_lr(&self, radius: f32, step: usize) -> f32 {
        match self.lr_rule {
            LearningRateRule::NormAdaptive => adaptive_lr(radius, self.base_lr, self.lr_power),
            LearningRateRule::LinearDecay { total_steps } => {
                self.base_lr * (1.0 - step as f32 / total_steps as f32).max(0.0)
            }
        }
    }

    /// Competition outputs for one patch, already carrying the anti-Hebbian sign.
    fn credit(&self, u: &[f32], out: &mut [f32]) {
        match self.mode {
            PlasticityMode::HardWta => hard_competition_into(u, out),
            PlasticityMode::SoftHebbian => soft_competition_into(u, self.inverse_temperature, out),
            PlasticityMode::SoftAntiHebbian => {
                soft_competition_into(u, self.inverse_temperature, out);
                let win = winner(u);
                for (k, v) in out.iter_mut().enumerate() {
                    if k != win {
                        *v = -*v;
                    }
                }
            }
        }
    }
}

/// What one mini-batch update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateSummary {
    pub mean_abs_delta: f32,
    pub mean_radius: f32,
}

/// Applies one mini-batch of patches to the bank.
///
/// Batched order computes all responses with the current weights, reduces
/// the per-patch deltas and applies them once; learning rates come from the
/// radii at the start of the batch. Sequential order applies patch by patch.
pub fn apply_batch_update(
    bank: &mut NeuronBank,
    patches: &PatchMatrix,
    cfg: &PlasticityConfig,
    step: usize,
) -> Result<UpdateSummary> {
    cfg.validate()?;
    let (p, d, k) = (patches.rows(), patches.cols(), bank.neurons());
    if d != bank.synapses() {
        return Err(shape_err!("patch width {d} does not match {} synapses per neuron", bank.synapses()));
    }
    if p == 0 {
        return Ok(UpdateSummary { mean_abs_delta: 0.0, mean_radius: bank.mean_radius() });
    }
    let (delta, step_err) = match cfg.update_order {
        UpdateOrder::Batched => (batched_delta(bank, patches, cfg, step), None),
        UpdateOrder::Sequential => {
            let before = bank.weights.clone();
            let r = sequential_updates(bank, patches, cfg, step);
            let delta: Vec<f32> = bank.weights.iter().zip(&before).map(|(a, b)| a - b).collect();
            if r.is_err() {
                bank.weights = before;
                bank.refresh_radii();
            }
            (delta, r.err())
        }
    };
    if let Some(e) = step_err {
        return Err(e);
    }
    if cfg.update_order == UpdateOrder::Batched {
        bank.apply_delta(&delta).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite { layer: 0, step },
            e => e,
        })?;
    }
    let mean_abs_delta = (delta.iter().map(|v| v.abs() as f64).sum::<f64>() / (k * d) as f64) as f32;
    Ok(UpdateSummary { mean_abs_delta, mean_radius: bank.mean_radius() })
}

fn batched_delta(bank: &NeuronBank, patches: &PatchMatrix, cfg: &PlasticityConfig, step: usize) -> Vec<f32> {
    let (p, d, k) = (patches.rows(), patches.cols(), bank.neurons());
    let x = patches.data();
    let mut u = vec![0.0f32; p * k];
    math::gemm(p, d, k, 1.0, x, false, &bank.weights, true, 0.0, &mut u);
    // a[p][k]: signed competition credit; c[k] = sum_p a[p][k] * u[p][k]
    let mut a = vec![0.0f32; p * k];
    let mut c = vec![0.0f64; k];
    for r in 0..p {
        let ur = &u[r * k..(r + 1) * k];
        let ar = &mut a[r * k..(r + 1) * k];
        cfg.credit(ur, ar);
        for j in 0..k {
            c[j] += (ar[j] * ur[j]) as f64;
        }
    }
    let mut delta = vec![0.0f32; k * d];
    math::gemm(k, p, d, 1.0, &a, true, x, false, 0.0, &mut delta);
    for j in 0..k {
        let cj = c[j] as f32;
        let w = &bank.weights[j * d..(j + 1) * d];
        for (o, &wi) in delta[j * d..(j + 1) * d].iter_mut().zip(w) {
            *o -= cj * wi;
        }
    }
    let scale = aggregation_scale(cfg.aggregation, p, &delta);
    for j in 0..k {
        let lr = cfg.neuron_lr(bank.radii[j], step) * scale;
        for o in &mut delta[j * d..(j + 1) * d] {
            *o *= lr;
        }
    }
    delta
}

fn aggregation_scale(aggregation: Aggregation, patches: usize, raw: &[f32]) -> f32 {
    match aggregation {
        Aggregation::Mean => 1.0 / patches as f32,
        Aggregation::Sum => 1.0,
        Aggregation::MaxAbs => {
            let m = raw.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            if m > 0.0 {
                1.0 / m
            } else {
                0.0
            }
        }
    }
}

fn sequential_updates(bank: &mut NeuronBank, patches: &PatchMatrix, cfg: &PlasticityConfig, step: usize) -> Result<()> {
    let (p, d, k) = (patches.rows(), patches.cols(), bank.neurons());
    let mut u = vec![0.0f32; k];
    let mut a = vec![0.0f32; k];
    let mut raw = vec![0.0f32; k * d];
    for r in 0..p {
        let x = patches.row(r);
        for (uj, w) in u.iter_mut().zip(bank.weights.chunks_exact(d)) {
            *uj = math::dot(w, x);
        }
        cfg.credit(&u, &mut a);
        for j in 0..k {
            let row = &bank.weights[j * d..(j + 1) * d];
            for ((o, &wi), &xi) in raw[j * d..(j + 1) * d].iter_mut().zip(row).zip(x) {
                *o = a[j] * (xi - u[j] * wi);
            }
        }
        // with max-abs each patch is normalized on its own
        let scale = match cfg.aggregation {
            Aggregation::MaxAbs => aggregation_scale(Aggregation::MaxAbs, 1, &raw),
            agg => aggregation_scale(agg, p, &raw),
        };
        for j in 0..k {
            let g = cfg.neuron_lr(bank.radii[j], step) * scale;
            let row = &mut bank.weights[j * d..(j + 1) * d];
            for (wi, &o) in row.iter_mut().zip(&raw[j * d..(j + 1) * d]) {
                *wi += g * o;
            }
            if row.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite { layer: 0, step });
            }
            bank.radii[j] = row_norm(row);
        }
    }
    Ok(())
}
