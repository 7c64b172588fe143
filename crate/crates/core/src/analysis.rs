//! Instrumentation: R1 counting, receptive fields by projected gradient
//! ascent, top-activating patches and image tiling.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};

use crate::data::{BatchOrder, Dataset};
use crate::error::{config_err, shape_err, Result};
use crate::math;
use crate::network::Model;
use crate::plasticity::NeuronBank;
use crate::rng;
use crate::tensor::{self, Padding, PatchGeometry, PoolSpec, Shape, Tensor};

pub const DEFAULT_R1_TOLERANCE: f32 = 0.05;

/// Fraction of radii within `tolerance` of 1.
pub fn r1_fraction(radii: &[f32], tolerance: f32) -> f32 {
    if radii.is_empty() {
        return 0.0;
    }
    radii.iter().filter(|&&r| (r - 1.0).abs() <= tolerance).count() as f32 / radii.len() as f32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerR1 {
    /// 1-based layer index.
    pub layer: usize,
    pub radii: Vec<f32>,
    pub fraction: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R1Report {
    pub tolerance: f32,
    pub layers: Vec<LayerR1>,
}

impl R1Report {
    /// R1 fraction over the neurons of all layers together.
    pub fn overall(&self) -> f32 {
        let total: usize = self.layers.iter().map(|l| l.radii.len()).sum();
        let hits: f32 = self.layers.iter().map(|l| l.fraction * l.radii.len() as f32).sum();
        if total == 0 {
            0.0
        } else {
            hits / total as f32
        }
    }
}

pub fn count_r1(model: &Model, tolerance: f32) -> Result<R1Report> {
    if !(tolerance > 0.0) {
        return Err(config_err!("R1 tolerance must be positive, got {tolerance}"));
    }
    Ok(R1Report {
        tolerance,
        layers: model
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| LayerR1 {
                layer: i + 1,
                radii: l.bank.radii().to_vec(),
                fraction: r1_fraction(l.bank.radii(), tolerance),
            })
            .collect(),
    })
}

/// Affine map from a position on a feature grid to the input-space window
/// it sees: position `p` covers `[scale*p + offset, scale*p + offset + size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfGeometry {
    pub scale: isize,
    pub offset: isize,
    pub size: isize,
}

impl RfGeometry {
    pub const INPUT: Self = Self { scale: 1, offset: 0, size: 1 };

    /// Composes a window of `kernel` cells with the given stride and padding.
    pub fn then(self, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            scale: self.scale * stride as isize,
            offset: self.offset - self.scale * padding as isize,
            size: self.scale * (kernel as isize - 1) + self.size,
        }
    }

    pub fn window(&self, p: usize) -> (isize, isize) {
        let start = self.scale * p as isize + self.offset;
        (start, start + self.size)
    }
}

/// Geometry of the convolution output grid of layer `layer` (0-based).
pub fn conv_rf_geometry(model: &Model, layer: usize) -> Result<RfGeometry> {
    let specs = &model.arch.layers;
    if layer >= specs.len() {
        return Err(config_err!("layer {} out of range", layer + 1));
    }
    let mut g = RfGeometry::INPUT;
    for s in &specs[..layer] {
        g = g.then(s.conv_kernel, 1, s.conv_padding);
        if let Some(p) = &s.pool {
            g = g.then(p.kernel, p.stride, p.padding);
        }
    }
    let s = &specs[layer];
    Ok(g.then(s.conv_kernel, 1, s.conv_padding))
}

/// Input-space box `[y0, y1) x [x0, x1)`; may extend past the image border.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub y0: isize,
    pub x0: isize,
    pub y1: isize,
    pub x1: isize,
}

impl BoundingBox {
    pub fn height(&self) -> isize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> isize {
        self.x1 - self.x0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchHit {
    pub image: usize,
    /// Position on the layer's convolution output grid.
    pub y: usize,
    pub x: usize,
    pub bbox: BoundingBox,
    pub activation: f32,
}

#[derive(PartialEq)]
struct Ranked(f32, usize, usize, usize);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    // higher activation first, then earlier image / position
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then_with(|| (o.1, o.2, o.3).cmp(&(self.1, self.2, self.3)))
    }
}

/// The `k` strongest convolution responses of one neuron over a dataset,
/// strongest first.
pub fn top_activating_patches(
    model: &Model,
    data: &Dataset,
    layer: usize,
    neuron: usize,
    k: usize,
) -> Result<Vec<PatchHit>> {
    if k == 0 {
        return Err(config_err!("k must be at least 1"));
    }
    let target = model.layers.get(layer).ok_or_else(|| config_err!("layer {} out of range", layer + 1))?;
    if neuron >= target.bank.neurons() {
        return Err(config_err!("neuron {neuron} out of range for {} neurons", target.bank.neurons()));
    }
    let single = NeuronBank::from_weights(target.bank.geometry(), target.bank.row(neuron).to_vec())?;
    let geom = conv_rf_geometry(model, layer)?;
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for idx in BatchOrder::sequential(data.len(), 32)? {
        let (x, _) = data.batch(&idx);
        let x = model.forward(&x, layer)?;
        let xn = target.bn.normalize_eval(&x)?;
        let u = tensor::conv_forward(&xn, &single, Padding::Explicit(target.spec.conv_padding))?;
        let s = u.shape();
        for (j, &img) in idx.iter().enumerate() {
            for (pos, &v) in u.item(j).iter().enumerate() {
                heap.push(Reverse(Ranked(v, img, pos / s.w, pos % s.w)));
                if heap.len() > k {
                    heap.pop();
                }
            }
        }
    }
    let mut hits: Vec<PatchHit> = heap
        .into_iter()
        .map(|Reverse(Ranked(activation, image, y, x))| {
            let (y0, y1) = geom.window(y);
            let (x0, x1) = geom.window(x);
            PatchHit { image, y, x, bbox: BoundingBox { y0, x0, y1, x1 }, activation }
        })
        .collect();
    hits.sort_by_key(|h| core::cmp::Reverse(Ranked(h.activation, h.image, h.y, h.x)));
    Ok(hits)
}

/// Settings of the receptive-field search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub steps: usize,
    pub step_size: f32,
    /// Converged once the response gains less than this over `window` steps.
    pub tolerance: f32,
    pub window: usize,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self { steps: 256, step_size: 0.05, tolerance: 1e-5, window: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptiveField {
    /// Unit-norm input image `(1, c, h, w)`.
    pub image: Tensor,
    pub layer: usize,
    pub neuron: usize,
    /// Conv output position the response is read from.
    pub position: (usize, usize),
    pub activation: f32,
    pub iterations: usize,
    pub converged: bool,
}

/// Linear response of `neuron` at the centre of layer `layer`'s convolution
/// output, and its gradient with respect to the input image. Earlier layers
/// are traversed without their activation function; batch norm acts as the
/// eval-mode affine map and max pooling passes gradient to its argmax cell.
pub fn linear_response(model: &Model, layer: usize, neuron: usize, image: &Tensor) -> Result<(f32, Tensor)> {
    let target = model.layers.get(layer).ok_or_else(|| config_err!("layer {} out of range", layer + 1))?;
    if neuron >= target.bank.neurons() {
        return Err(config_err!("neuron {neuron} out of range for {} neurons", target.bank.neurons()));
    }
    if image.shape() != model.arch.input_shape(1) {
        return Err(shape_err!("image {} does not match model input {}", image.shape(), model.arch.input_shape(1)));
    }
    struct Tape {
        in_shape: Shape,
        scale: Vec<f32>,
        conv_geom: PatchGeometry,
        pool: Option<(PoolSpec, Shape, Vec<u32>)>,
    }
    let mut tapes = Vec::with_capacity(layer);
    let mut x = image.clone();
    for l in &model.layers[..layer] {
        let (shift, scale) = l.bn.eval_affine()?;
        let xn = apply_channel_affine(&x, &shift, &scale);
        let conv = tensor::conv_forward(&xn, &l.bank, Padding::Explicit(l.spec.conv_padding))?;
        let conv_geom = PatchGeometry::new(x.shape(), l.spec.conv_kernel, 1, l.spec.conv_padding)?;
        let in_shape = x.shape();
        let pool = match &l.spec.pool {
            Some(p) => {
                let (out, routes) = tensor::pool_with_routes(&conv, p)?;
                let conv_shape = conv.shape();
                x = out;
                Some((*p, conv_shape, routes))
            }
            None => {
                x = conv;
                None
            }
        };
        tapes.push(Tape { in_shape, scale, conv_geom, pool });
    }
    let (shift, scale) = target.bn.eval_affine()?;
    let xn = apply_channel_affine(&x, &shift, &scale);
    let g = PatchGeometry::new(x.shape(), target.spec.conv_kernel, 1, target.spec.conv_padding)?;
    let (cy, cx) = (g.out_h / 2, g.out_w / 2);
    let patches = tensor::extract_patches(&xn, target.spec.conv_kernel, 1, target.spec.conv_padding)?;
    let row = cy * g.out_w + cx;
    let value = math::dot(patches.row(row), target.bank.row(neuron));

    // d value / d normalized input: the kernel placed at the centre window
    let mut grad_rows = vec![0.0f32; g.rows() * g.cols()];
    grad_rows[row * g.cols()..(row + 1) * g.cols()].copy_from_slice(target.bank.row(neuron));
    let mut grad = tensor::col2im(&grad_rows, &g)?;
    scale_channels(&mut grad, &scale);

    for (l, tape) in model.layers[..layer].iter().zip(tapes).rev() {
        let grad_conv = match &tape.pool {
            Some((p, conv_shape, routes)) => tensor::pool_backward(&grad, *conv_shape, p, routes)?,
            None => grad,
        };
        // (positions x K) gradient rows times W gives per-patch input gradients
        let cs = grad_conv.shape();
        let k = cs.c;
        let positions = cs.plane();
        let mut gu = vec![0.0f32; positions * k];
        for c in 0..k {
            for (p, &v) in grad_conv.item(0)[c * positions..(c + 1) * positions].iter().enumerate() {
                gu[p * k + c] = v;
            }
        }
        let d = tape.conv_geom.cols();
        let mut gp = vec![0.0f32; positions * d];
        math::gemm(positions, k, d, 1.0, &gu, false, l.bank.weights(), false, 0.0, &mut gp);
        grad = tensor::col2im(&gp, &tape.conv_geom)?;
        debug_assert_eq!(grad.shape(), tape.in_shape);
        scale_channels(&mut grad, &tape.scale);
    }
    Ok((value, grad))
}

fn apply_channel_affine(x: &Tensor, shift: &[f32], scale: &[f32]) -> Tensor {
    let s = x.shape();
    let plane = s.plane();
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let c = i % s.c;
        for v in chunk {
            *v = (*v - shift[c]) * scale[c];
        }
    }
    out
}

fn scale_channels(x: &mut Tensor, scale: &[f32]) {
    let s = x.shape();
    let plane = s.plane();
    for (i, chunk) in x.data_mut().chunks_mut(plane).enumerate() {
        let k = scale[i % s.c];
        for v in chunk {
            *v *= k;
        }
    }
}

fn normalize_unit(v: &mut [f32]) {
    let n = libm::sqrt(v.iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>());
    if n > 0.0 {
        let inv = (1.0 / n) as f32;
        v.iter_mut().for_each(|a| *a *= inv);
    }
}

/// Gradient ascent on the unit sphere toward the input that maximizes a
/// neuron's linear response. Returns the best image seen.
pub fn receptive_field_pgd(model: &Model, layer: usize, neuron: usize, cfg: &PgdConfig) -> Result<ReceptiveField> {
    if cfg.steps == 0 || !(cfg.step_size > 0.0) || cfg.window == 0 {
        return Err(config_err!("PGD needs at least one step, a positive step size and a window"));
    }
    let shape = model.arch.input_shape(1);
    let mut g = rng::stream(cfg.seed, rng::tags::PGD, (layer as u64) << 32 | neuron as u64);
    let init: Vec<f32> = (0..shape.len())
        .map(|_| {
            <rand_distr::StandardNormal as rand_distr::Distribution<f32>>::sample(&rand_distr::StandardNormal, &mut g)
        })
        .collect();
    let mut x = Tensor::new(shape, init)?;
    normalize_unit(x.data_mut());

    let (mut value, mut grad) = linear_response(model, layer, neuron, &x)?;
    let mut best = (value, x.clone());
    let mut history = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.steps {
        let gn = libm::sqrt(grad.data().iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>()) as f32;
        if !(gn > 0.0) {
            converged = true;
            break;
        }
        let step = cfg.step_size / gn;
        for (xi, gi) in x.data_mut().iter_mut().zip(grad.data()) {
            *xi += step * gi;
        }
        normalize_unit(x.data_mut());
        iterations += 1;
        (value, grad) = linear_response(model, layer, neuron, &x)?;
        if value > best.0 {
            best = (value, x.clone());
        }
        history.push(value);
        if history.len() > cfg.window {
            let past = history[history.len() - 1 - cfg.window];
            if value - past < cfg.tolerance {
                converged = true;
                break;
            }
        }
    }
    let spec = &model.arch.layers[layer];
    let conv_size = spec.input_size + 2 * spec.conv_padding + 1 - spec.conv_kernel;
    Ok(ReceptiveField {
        image: best.1,
        layer,
        neuron,
        position: (conv_size / 2, conv_size / 2),
        activation: best.0,
        iterations,
        converged,
    })
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na = libm::sqrt(a.iter().map(|&x| x as f64 * x as f64).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|&x| x as f64 * x as f64).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)) as f32
    }
}

/// A first-layer kernel placed on an otherwise zero input image so that it
/// covers the window read by the centre convolution position.
pub fn embed_kernel(model: &Model, neuron: usize) -> Result<Tensor> {
    let first = model.layers.first().ok_or_else(|| config_err!("model has no layers"))?;
    if neuron >= first.bank.neurons() {
        return Err(config_err!("neuron {neuron} out of range"));
    }
    let shape = model.arch.input_shape(1);
    let g = PatchGeometry::new(shape, first.spec.conv_kernel, 1, first.spec.conv_padding)?;
    let row = (g.out_h / 2) * g.out_w + g.out_w / 2;
    let mut rows = vec![0.0f32; g.rows() * g.cols()];
    rows[row * g.cols()..(row + 1) * g.cols()].copy_from_slice(first.bank.row(neuron));
    tensor::col2im(&rows, &g)
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Tiles `(c, h, w)` images (c = 1 or 3) row-major into a grid with 1-px
/// separators; each tile is min-max scaled on its own.
pub fn tile_images(images: &[&[f32]], shape: (usize, usize, usize), rows: usize, cols: usize) -> Result<RgbImage> {
    let (c, h, w) = shape;
    if c != 1 && c != 3 {
        return Err(shape_err!("tiles need 1 or 3 channels, got {c}"));
    }
    if images.len() > rows * cols {
        return Err(shape_err!("{} images do not fit a {rows}x{cols} grid", images.len()));
    }
    if let Some(bad) = images.iter().find(|im| im.len() != c * h * w) {
        return Err(shape_err!("tile of {} values does not match {c}x{h}x{w}", bad.len()));
    }
    let width = cols * (w + 1) + 1;
    let height = rows * (h + 1) + 1;
    let mut pixels = vec![0u8; width * height * 3];
    for (i, im) in images.iter().enumerate() {
        let (lo, hi) = im.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (ty, tx) = (i / cols, i % cols);
        for y in 0..h {
            for x in 0..w {
                let py = 1 + ty * (h + 1) + y;
                let px = 1 + tx * (w + 1) + x;
                for ch in 0..3 {
                    let v = im[(if c == 3 { ch } else { 0 }) * h * w + y * w + x];
                    pixels[(py * width + px) * 3 + ch] = libm::roundf((v - lo) / span * 255.0) as u8;
                }
            }
        }
    }
    Ok(RgbImage { width, height, pixels })
}

/// Grid shape for `n` tiles: as close to square as possible, wider than tall.
pub fn grid_shape(n: usize) -> (usize, usize) {
    if n == 0 {
        return (0, 0);
    }
    let mut best = (1, n);
    for r in 1..=n {
        if n.is_multiple_of(r) && r <= n / r {
            best = (r, n / r);
        }
    }
    // prime counts fall back to a square-ish grid with empty cells
    if best.0 == 1 && n > 3 {
        let c = libm::ceil(libm::sqrt(n as f64)) as usize;
        return (n.div_ceil(c), c);
    }
    best
}
