//! Layers, the width-scaled architecture builder and the layer stack.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::error::{config_err, shape_err, Result};
use crate::plasticity::{self, Aggregation, InitSpec, KernelGeometry, NeuronBank, PlasticityConfig, UpdateSummary};
use crate::rng;
use crate::tensor::{self, BatchNormState, Mode, Padding, PatchMatrix, PoolKind, PoolSpec, Shape, Tensor};

/// Initial radius used by the presets.
pub const DEFAULT_INIT_RADIUS: f32 = 5.0;

/// Hyperparameters of one layer, independent of its width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerHyper {
    pub kernel: usize,
    pub plasticity: PlasticityConfig,
    pub pool: Option<PoolSpec>,
    pub activation: ActivationSpec,
    pub init: InitSpec,
}

impl LayerHyper {
    /// Tuned CIFAR-10 settings for layer `index` (0-based); layers past the
    /// third reuse the third layer's values.
    pub fn cifar_default(index: usize) -> Self {
        let (kernel, eta, inv_temp, pool, power) = match index {
            0 => (5, 0.08, 1.0, PoolSpec { kind: PoolKind::Max, kernel: 4, stride: 2, padding: 1 }, 0.7),
            1 => (3, 0.005, 0.65, PoolSpec { kind: PoolKind::Max, kernel: 4, stride: 2, padding: 1 }, 1.4),
            _ => (3, 0.01, 0.25, PoolSpec { kind: PoolKind::Avg, kernel: 2, stride: 2, padding: 0 }, 1.0),
        };
        Self {
            kernel,
            plasticity: PlasticityConfig {
                aggregation: Aggregation::MaxAbs,
                ..PlasticityConfig::new(inv_temp, eta, 0.5)
            },
            pool: Some(pool),
            activation: ActivationSpec::Triangle { power },
            init: InitSpec::normal(DEFAULT_INIT_RADIUS),
        }
    }
}

/// Fully resolved description of one `BN -> conv -> pool -> activation` layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub input_size: usize,
    pub conv_kernel: usize,
    pub conv_padding: usize,
    pub pool: Option<PoolSpec>,
    pub activation: ActivationSpec,
    pub plasticity: PlasticityConfig,
    pub init: InitSpec,
}

impl LayerSpec {
    pub fn kernel_geometry(&self) -> KernelGeometry {
        KernelGeometry::new(self.in_channels, self.conv_kernel)
    }

    pub fn conv_output_size(&self) -> usize {
        self.input_size + 2 * self.conv_padding + 1 - self.conv_kernel
    }

    pub fn output_size(&self) -> Result<usize> {
        let conv = self.conv_output_size();
        match &self.pool {
            Some(p) => p.output_size(conv),
            None => Ok(conv),
        }
    }

    pub fn output_features(&self) -> Result<usize> {
        let s = self.output_size()?;
        Ok(self.out_channels * s * s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(config_err!("layer needs at least one input and one output channel"));
        }
        if self.conv_kernel == 0 || self.input_size + 2 * self.conv_padding < self.conv_kernel {
            return Err(config_err!(
                "kernel {} does not fit input {} with padding {}",
                self.conv_kernel,
                self.input_size,
                self.conv_padding
            ));
        }
        if let Some(p) = &self.pool {
            if p.stride != 2 {
                return Err(config_err!("pooling stride must be 2, got {}", p.stride));
            }
        }
        self.activation.validate()?;
        self.plasticity.validate()?;
        self.output_size()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureMode {
    Convolutional,
    FullyConnected,
}

/// A width-scaled layer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_channels: usize,
    pub input_size: usize,
    pub first_width: usize,
    pub width_factor: usize,
    pub mode: ArchitectureMode,
    pub layers: Vec<LayerSpec>,
    /// Layers whose hyperparameters were not given and fell back to the
    /// last configured (or default) layer.
    #[serde(default)]
    pub inherited_defaults: Vec<usize>,
}

impl ArchitectureSpec {
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.out_channels).collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Output resolution after each layer.
    pub fn resolutions(&self) -> Result<Vec<usize>> {
        self.layers.iter().map(|l| l.output_size()).collect()
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape::new(batch, self.input_channels, self.input_size, self.input_size)
    }

    /// Keeps only the first `depth` layers.
    pub fn truncated(&self, depth: usize) -> Self {
        let mut a = self.clone();
        a.layers.truncate(depth);
        a.inherited_defaults.retain(|&i| i < depth);
        a
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(config_err!("architecture has no layers"));
        }
        let (mut ch, mut size) = (self.input_channels, self.input_size);
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_channels != ch || l.input_size != size {
                return Err(config_err!(
                    "layer {} expects {}x{}x{} input but receives {ch}x{size}x{size}",
                    i + 1,
                    l.in_channels,
                    l.input_size,
                    l.input_size
                ));
            }
            l.validate()?;
            ch = l.out_channels;
            size = l.output_size()?;
        }
        Ok(())
    }
}

/// Inputs of [`build_architecture`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureRequest {
    pub input_size: usize,
    pub input_channels: usize,
    pub first_width: usize,
    pub width_factor: usize,
    /// Per-layer settings. Missing entries among the first three fall back to
    /// [`LayerHyper::cifar_default`]; deeper ones copy the third layer.
    pub hyper: Vec<LayerHyper>,
    /// Stop once a layer's output resolution is at most this value.
    pub stop_resolution: usize,
    /// Optional hard cap on depth (for shallow probes).
    pub max_layers: Option<usize>,
}

impl ArchitectureRequest {
    /// Stop threshold that reproduces the published depths (3 layers at 28
    /// and 32 px, 4 at 96 px, 5 at 160 px).
    pub const DEFAULT_STOP_RESOLUTION: usize = 6;

    pub fn new(input_size: usize, input_channels: usize, first_width: usize, width_factor: usize) -> Self {
        Self {
            input_size,
            input_channels,
            first_width,
            width_factor,
            hyper: Vec::new(),
            stop_resolution: Self::DEFAULT_STOP_RESOLUTION,
            max_layers: None,
        }
    }
}

/// Stacks same-size convolutions with stride-2 pooling until the output
/// resolution drops to the stop threshold, multiplying the width by the
/// width factor at every layer.
pub fn build_architecture(req: &ArchitectureRequest) -> Result<ArchitectureSpec> {
    if req.input_size < 8 {
        return Err(config_err!("input resolution must be at least 8, got {}", req.input_size));
    }
    if req.first_width == 0 || req.width_factor == 0 || req.input_channels == 0 {
        return Err(config_err!("widths, width factor and input channels must be at least 1"));
    }
    if req.max_layers == Some(0) {
        return Err(config_err!("at least one layer is required"));
    }
    let mut layers = Vec::new();
    let mut inherited = Vec::new();
    let (mut size, mut ch, mut width) = (req.input_size, req.input_channels, req.first_width);
    loop {
        let idx = layers.len();
        let hyper = match req.hyper.get(idx) {
            Some(h) => *h,
            None if idx < 3 => LayerHyper::cifar_default(idx),
            None => {
                inherited.push(idx);
                req.hyper.get(2).copied().unwrap_or_else(|| LayerHyper::cifar_default(2))
            }
        };
        let pool =
            hyper.pool.ok_or_else(|| config_err!("layer {} has no pooling, the resolution cannot shrink", idx + 1))?;
        let spec = LayerSpec {
            in_channels: ch,
            out_channels: width,
            input_size: size,
            conv_kernel: hyper.kernel,
            conv_padding: Padding::Same.resolve(hyper.kernel)?,
            pool: Some(pool),
            activation: hyper.activation,
            plasticity: hyper.plasticity,
            init: hyper.init,
        };
        spec.validate()?;
        let out = spec.output_size()?;
        if out >= size {
            return Err(config_err!("layer {} does not reduce resolution {size}", idx + 1));
        }
        layers.push(spec);
        if out <= req.stop_resolution || req.max_layers == Some(layers.len()) {
            break;
        }
        if out < 2 {
            return Err(config_err!("resolution {} cannot be reduced to {}", req.input_size, req.stop_resolution));
        }
        size = out;
        ch = width;
        width = width.checked_mul(req.width_factor).ok_or_else(|| config_err!("layer width overflows"))?;
    }
    Ok(ArchitectureSpec {
        input_channels: req.input_channels,
        input_size: req.input_size,
        first_width: req.first_width,
        width_factor: req.width_factor,
        mode: ArchitectureMode::Convolutional,
        layers,
        inherited_defaults: inherited,
    })
}

/// One hidden layer whose kernel covers the whole input: a fully connected
/// SoftHebb layer expressed as a convolution without padding or pooling.
pub fn build_fully_connected(
    input_size: usize,
    input_channels: usize,
    width: usize,
    plasticity: PlasticityConfig,
    activation: ActivationSpec,
    init: InitSpec,
) -> Result<ArchitectureSpec> {
    let spec = LayerSpec {
        in_channels: input_channels,
        out_channels: width,
        input_size,
        conv_kernel: input_size,
        conv_padding: 0,
        pool: None,
        activation,
        plasticity,
        init,
    };
    spec.validate()?;
    Ok(ArchitectureSpec {
        input_channels,
        input_size,
        first_width: width,
        width_factor: 1,
        mode: ArchitectureMode::FullyConnected,
        layers: vec![spec],
        inherited_defaults: Vec::new(),
    })
}

/// Intermediate values of a train-mode layer pass.
#[derive(Debug, Clone)]
pub struct TrainForward {
    /// Post-batch-norm input patches (what plasticity sees).
    pub patches: PatchMatrix,
    /// Batch-normalized input.
    pub normalized: Tensor,
}

/// A layer with its learned state.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub bank: NeuronBank,
    pub bn: BatchNormState,
}

impl Layer {
    pub fn new(spec: LayerSpec, bank: NeuronBank, bn: BatchNormState) -> Result<Self> {
        spec.validate()?;
        if bank.geometry() != spec.kernel_geometry() || bank.neurons() != spec.out_channels {
            return Err(shape_err!(
                "bank of {} neurons over {:?} does not fit layer {} x {:?}",
                bank.neurons(),
                bank.geometry(),
                spec.out_channels,
                spec.kernel_geometry()
            ));
        }
        if bn.channels() != spec.in_channels {
            return Err(shape_err!("batch norm has {} channels, layer input has {}", bn.channels(), spec.in_channels));
        }
        Ok(Self { spec, bank, bn })
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = input.shape();
        if s.c != self.spec.in_channels || s.h != self.spec.input_size || s.w != self.spec.input_size {
            return Err(shape_err!(
                "layer expects {}x{}x{} input, got {s}",
                self.spec.in_channels,
                self.spec.input_size,
                self.spec.input_size
            ));
        }
        Ok(())
    }

    /// `conv -> pool -> activation` on an already normalized input.
    pub fn forward_normalized(&self, normalized: &Tensor) -> Result<Tensor> {
        let conv = tensor::conv_forward(normalized, &self.bank, Padding::Explicit(self.spec.conv_padding))?;
        let mut out = match &self.spec.pool {
            Some(p) => tensor::pool(&conv, p)?,
            None => conv,
        };
        self.spec.activation.apply(&mut out);
        Ok(out)
    }

    /// Eval-mode pass using running batch-norm statistics.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let normalized = self.bn.normalize_eval(input)?;
        self.forward_normalized(&normalized)
    }

    /// Train-mode batch norm (updating running statistics) and patch extraction.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<TrainForward> {
        self.check_input(input)?;
        let normalized = self.bn.normalize_train(input)?;
        let patches = tensor::extract_patches(&normalized, self.spec.conv_kernel, 1, self.spec.conv_padding)?;
        Ok(TrainForward { patches, normalized })
    }

    /// One plasticity step on a mini-batch.
    pub fn train_step(&mut self, input: &Tensor, step: usize) -> Result<(TrainForward, UpdateSummary)> {
        let fwd = self.forward_train(input)?;
        let summary = plasticity::apply_batch_update(&mut self.bank, &fwd.patches, &self.spec.plasticity, step)?;
        Ok((fwd, summary))
    }
}

/// Runs one layer in the given mode. Train mode also updates batch norm
/// statistics; it never changes the weights.
pub fn forward_layer(input: &Tensor, layer: &mut Layer, mode: Mode) -> Result<Tensor> {
    match mode {
        Mode::Eval => layer.forward(input),
        Mode::Train => {
            let fwd = layer.forward_train(input)?;
            layer.forward_normalized(&fwd.normalized)
        }
    }
}

/// A stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchitectureSpec,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl Model {
    /// Fresh weights from each layer's init spec; layer `i` draws from its
    /// own stream so that depth does not change earlier layers.
    pub fn init(arch: ArchitectureSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, spec) in arch.layers.iter().enumerate() {
            let mut g = rng::stream(seed, rng::tags::INIT, i as u64);
            let bank = plasticity::init_weights(spec.out_channels, spec.kernel_geometry(), &spec.init, &mut g)?;
            layers.push(Layer::new(*spec, bank, BatchNormState::new(spec.in_channels))?);
        }
        Ok(Self { arch, layers, seed })
    }

    pub fn from_layers(arch: ArchitectureSpec, layers: Vec<Layer>, seed: u64) -> Result<Self> {
        arch.validate()?;
        if layers.len() != arch.layers.len() || layers.iter().zip(&arch.layers).any(|(l, s)| l.spec != *s) {
            return Err(config_err!("layers do not match the architecture"));
        }
        Ok(Self { arch, layers, seed })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Eval-mode output of the first `depth` layers.
    pub fn forward(&self, input: &Tensor, depth: usize) -> Result<Tensor> {
        if depth > self.layers.len() {
            return Err(config_err!("depth {depth} exceeds the {} layers of the model", self.layers.len()));
        }
        let mut x = input.clone();
        for layer in &self.layers[..depth] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    /// Flattened feature width after `depth` layers.
    pub fn feature_dim(&self, depth: usize) -> Result<usize> {
        if depth == 0 {
            return Ok(self.arch.input_channels * self.arch.input_size * self.arch.input_size);
        }
        self.layers.get(depth - 1).ok_or_else(|| config_err!("depth {depth} out of range"))?.spec.output_features()
    }

    /// One-line summary, e.g. `3 layers [96, 384, 1536] at 32px`.
    pub fn describe(&self) -> String {
        format!("{} layers {:?} at {}px", self.depth(), self.arch.widths(), self.arch.input_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn arch(size: usize, first: usize, fw: usize) -> ArchitectureSpec {
        build_architecture(&ArchitectureRequest::new(size, 3, first, fw)).unwrap()
    }

    #[test]
    fn cifar_widths_and_kernels() {
        let a = arch(32, 96, 4);
        assert_eq!(a.widths(), [96, 384, 1536]);
        assert_eq!(a.layers.iter().map(|l| l.conv_kernel).collect::<Vec<_>>(), [5, 3, 3]);
        assert_eq!(a.resolutions().unwrap(), [16, 8, 4]);
        assert!(a.inherited_defaults.is_empty());
    }

    #[test]
    fn larger_inputs_get_deeper() {
        let stl = arch(96, 96, 4);
        assert_eq!(stl.widths(), [96, 384, 1536, 6144]);
        let imnet = arch(160, 48, 4);
        assert_eq!(imnet.depth(), 5);
        assert_eq!(*imnet.widths().last().unwrap(), 12288);
        assert_eq!(imnet.inherited_defaults, [3, 4]);
        let mnist = build_architecture(&ArchitectureRequest::new(28, 1, 96, 4)).unwrap();
        assert_eq!(mnist.depth(), 3);
    }

    #[test]
    fn unit_width_factor_keeps_width() {
        assert_eq!(arch(32, 16, 1).widths(), [16, 16, 16]);
    }

    #[test]
    fn strict_stop_rule_trace() {
        for size in [32usize, 64, 96, 128, 160] {
            let mut req = ArchitectureRequest::new(size, 3, 8, 2);
            req.stop_resolution = 4;
            let a = build_architecture(&req).unwrap();
            let res = a.resolutions().unwrap();
            let mut prev = size;
            for &r in &res {
                assert_eq!(r, prev / 2);
                prev = r;
            }
            assert!(*res.last().unwrap() <= 4);
            if res.len() > 1 {
                assert!(res[res.len() - 2] > 4);
            }
        }
    }

    #[test]
    fn builder_rejects_bad_requests() {
        assert!(matches!(build_architecture(&ArchitectureRequest::new(4, 3, 8, 2)), Err(Error::Config(_))));
        assert!(build_architecture(&ArchitectureRequest::new(32, 3, 0, 2)).is_err());
        let mut no_pool = ArchitectureRequest::new(32, 3, 8, 2);
        no_pool.hyper = vec![LayerHyper { pool: None, ..LayerHyper::cifar_default(0) }];
        assert!(build_architecture(&no_pool).is_err());
    }

    #[test]
    fn first_cifar_layer_shapes() {
        let mut req = ArchitectureRequest::new(32, 3, 96, 4);
        req.max_layers = Some(1);
        let model = Model::init(build_architecture(&req).unwrap(), 1).unwrap();
        assert_eq!(model.depth(), 1);
        let x =
            Tensor::new(Shape::new(2, 3, 32, 32), (0..2 * 3 * 1024).map(|i| (i % 17) as f32 * 0.1).collect()).unwrap();
        let mut layer = model.layers[0].clone();
        let y = forward_layer(&x, &mut layer, Mode::Train).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 96, 16, 16));
        let e1 = forward_layer(&x, &mut layer, Mode::Eval).unwrap();
        let e2 = forward_layer(&x, &mut layer, Mode::Eval).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(model.feature_dim(1).unwrap(), 96 * 16 * 16);
    }

    #[test]
    fn single_channel_triangle_vanishes() {
        let spec = LayerSpec {
            in_channels: 1,
            out_channels: 1,
            input_size: 4,
            conv_kernel: 1,
            conv_padding: 0,
            pool: Some(PoolSpec::halving(PoolKind::Max, 2).unwrap()),
            activation: ActivationSpec::Triangle { power: 1.0 },
            plasticity: PlasticityConfig::new(1.0, 0.1, 0.5),
            init: InitSpec::normal(1.0),
        };
        let bank = NeuronBank::from_weights(spec.kernel_geometry(), vec![1.0]).unwrap();
        let mut layer = Layer::new(spec, bank, BatchNormState::new(1)).unwrap();
        let x = Tensor::new(Shape::new(2, 1, 4, 4), (0..32).map(|v| v as f32).collect()).unwrap();
        let y = forward_layer(&x, &mut layer, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_requires_statistics_and_shape() {
        let model = Model::init(arch(32, 4, 2), 0).unwrap();
        let x = Tensor::zeros(Shape::new(1, 3, 32, 32));
        assert_eq!(model.forward(&x, 1), Err(Error::MissingStatistics));
        assert!(matches!(model.forward(&Tensor::zeros(Shape::new(1, 1, 32, 32)), 1), Err(Error::Shape(_))));
    }

    #[test]
    fn fully_connected_is_one_position() {
        let a = build_fully_connected(
            28,
            1,
            10,
            PlasticityConfig::new(1.0, 0.05, 0.5),
            ActivationSpec::Relu,
            InitSpec::normal(3.0),
        )
        .unwrap();
        assert_eq!(a.layers[0].output_size().unwrap(), 1);
        assert_eq!(a.layers[0].kernel_geometry().synapses(), 784);
        let m = Model::init(a, 3).unwrap();
        assert_eq!(m.feature_dim(1).unwrap(), 10);
    }

    #[test]
    fn init_streams_are_per_layer() {
        let deep = Model::init(arch(32, 4, 2), 9).unwrap();
        let shallow = Model::init(arch(32, 4, 2).truncated(1), 9).unwrap();
        assert_eq!(deep.layers[0].bank, shallow.layers[0].bank);
    }
}
