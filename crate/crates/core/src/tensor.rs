//! Dense 4-D tensors and the forward-pass primitives built on them.
//!
//! Layout is row-major `(n, c, h, w)`. Convolution goes through an explicit
//! patch matrix (im2col) so that both the forward pass and the plasticity
//! rule reduce to dense matrix products.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::math;
use crate::plasticity::NeuronBank;

/// Extent of a 4-D tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of values in one batch item.
    pub const fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_batch(self, n: usize) -> Self {
        Self { n, ..self }
    }
}

impl core::fmt::Display for Shape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense single-precision tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(shape_err!("tensor {shape} needs {} values, got {}", shape.len(), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.len()] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.shape.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.shape.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Gathers the listed batch items into a new tensor.
    pub fn select(&self, items: &[usize]) -> Tensor {
        let len = self.shape.item_len();
        let mut data = Vec::with_capacity(items.len() * len);
        for &i in items {
            data.extend_from_slice(self.item(i));
        }
        Tensor { shape: self.shape.with_batch(items.len()), data }
    }

    /// Reinterprets the data with another shape of equal length.
    pub fn reshape(self, shape: Shape) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Geometry of a patch extraction: which input window each row covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub input: Shape,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PatchGeometry {
    pub fn new(input: Shape, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(config_err!("kernel ({kernel}) and stride ({stride}) must be at least 1"));
        }
        let (ph, pw) = (input.h + 2 * padding, input.w + 2 * padding);
        if ph < kernel || pw < kernel {
            return Err(shape_err!(
                "padded input {ph}x{pw} (input {input}, padding {padding}) is smaller than kernel {kernel}"
            ));
        }
        Ok(Self {
            input,
            kernel,
            stride,
            padding,
            out_h: (ph - kernel) / stride + 1,
            out_w: (pw - kernel) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.input.n * self.positions()
    }

    /// Output positions per batch item.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Flattened patch width `c * k * k`.
    pub fn cols(&self) -> usize {
        self.input.c * self.kernel * self.kernel
    }

    /// `(batch item, y, x)` of a row.
    pub fn origin(&self, row: usize) -> (usize, usize, usize) {
        let per = self.positions();
        let n = row / per;
        let r = row % per;
        (n, r / self.out_w, r % self.out_w)
    }
}

/// One flattened input patch per output position, rows in raster order per
/// batch item. Columns follow `(channel, ky, kx)`, the same layout as a
/// neuron's weight row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    geometry: PatchGeometry,
    data: Vec<f32>,
}

impl PatchMatrix {
    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn rows(&self) -> usize {
        self.geometry.rows()
    }

    pub fn cols(&self) -> usize {
        self.geometry.cols()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn origin(&self, r: usize) -> (usize, usize, usize) {
        self.geometry.origin(r)
    }

    /// Wraps raw rows (for building presentations by hand).
    pub fn from_rows(cols: usize, data: Vec<f32>) -> Result<Self> {
        if cols == 0 || !data.len().is_multiple_of(cols) {
            return Err(shape_err!("{} values do not form rows of width {cols}", data.len()));
        }
        let rows = data.len() / cols;
        let geometry = PatchGeometry::new(Shape::new(rows, cols, 1, 1), 1, 1, 0)?;
        Ok(Self { geometry, data })
    }
}

/// Extracts every `kernel x kernel` window (zero padded) into a matrix.
pub fn extract_patches(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<PatchMatrix> {
    let geometry = PatchGeometry::new(input.shape(), kernel, stride, padding)?;
    let mut data = vec![0.0f32; geometry.rows() * geometry.cols()];
    fill_patches(input, &geometry, &mut data);
    Ok(PatchMatrix { geometry, data })
}

fn fill_patches(input: &Tensor, g: &PatchGeometry, out: &mut [f32]) {
    let s = g.input;
    let k = g.kernel;
    let cols = g.cols();
    let src = input.data();
    for n in 0..s.n {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (n * g.out_h + oy) * g.out_w + ox;
                let dst = &mut out[row * cols..(row + 1) * cols];
                let x0 = (ox * g.stride) as isize - g.padding as isize;
                for c in 0..s.c {
                    let plane = &src[(n * s.c + c) * s.h * s.w..(n * s.c + c + 1) * s.h * s.w];
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        let d = &mut dst[(c * k + ky) * k..(c * k + ky + 1) * k];
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let line = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                        if x0 >= 0 && x0 as usize + k <= s.w {
                            d.copy_from_slice(&line[x0 as usize..x0 as usize + k]);
                        } else {
                            for (kx, v) in d.iter_mut().enumerate() {
                                let ix = x0 + kx as isize;
                                if ix >= 0 && ix < s.w as isize {
                                    *v = line[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch rows back onto the input grid (the adjoint of
/// [`extract_patches`]).
pub fn col2im(rows: &[f32], g: &PatchGeometry) -> Result<Tensor> {
    if rows.len() != g.rows() * g.cols() {
        return Err(shape_err!("col2im expects {}x{} values, got {}", g.rows(), g.cols(), rows.len()));
    }
    let s = g.input;
    let k = g.kernel;
    let cols = g.cols();
    let mut out = Tensor::zeros(s);
    let dst = out.data_mut();
    for r in 0..g.rows() {
        let (n, oy, ox) = g.origin(r);
        let src = &rows[r * cols..(r + 1) * cols];
        for c in 0..s.c {
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= s.h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= s.w as isize {
                        continue;
                    }
                    dst[((n * s.c + c) * s.h + iy as usize) * s.w + ix as usize] += src[(c * k + ky) * k + kx];
                }
            }
        }
    }
    Ok(out)
}

/// Convolution padding request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// `(k - 1) / 2`, output keeps the input's spatial size; odd kernels only.
    Same,
    Explicit(usize),
}

impl Padding {
    pub fn resolve(self, kernel: usize) -> Result<usize> {
        match self {
            Padding::Explicit(p) => Ok(p),
            Padding::Same if kernel % 2 == 1 => Ok((kernel - 1) / 2),
            Padding::Same => Err(config_err!("same padding is undefined for even kernel size {kernel}")),
        }
    }
}

/// Pre-activations `u = patches . W^T`, one row of `K` values per patch.
pub fn patch_responses(patches: &PatchMatrix, bank: &NeuronBank) -> Result<Vec<f32>> {
    if patches.cols() != bank.synapses() {
        return Err(shape_err!(
            "patch width {} does not match {} synapses per neuron",
            patches.cols(),
            bank.synapses()
        ));
    }
    let (p, d, k) = (patches.rows(), patches.cols(), bank.neurons());
    let mut u = vec![0.0f32; p * k];
    math::gemm(p, d, k, 1.0, patches.data(), false, bank.weights(), true, 0.0, &mut u);
    Ok(u)
}

/// Rearranges per-patch responses (`rows x K`) into an `(n, K, h, w)` tensor.
pub fn responses_to_tensor(u: &[f32], g: &PatchGeometry, neurons: usize) -> Tensor {
    let positions = g.positions();
    let shape = Shape::new(g.input.n, neurons, g.out_h, g.out_w);
    let mut out = Tensor::zeros(shape);
    let dst = out.data_mut();
    for n in 0..g.input.n {
        for pos in 0..positions {
            let src = &u[(n * positions + pos) * neurons..(n * positions + pos + 1) * neurons];
            for (k, &v) in src.iter().enumerate() {
                dst[(n * neurons + k) * positions + pos] = v;
            }
        }
    }
    out
}

/// Stride-1 convolution of `input` with every neuron of `bank`.
pub fn conv_forward(input: &Tensor, bank: &NeuronBank, padding: Padding) -> Result<Tensor> {
    let geom = bank.geometry();
    if input.shape().c != geom.channels {
        return Err(shape_err!("input has {} channels but the kernels expect {}", input.shape().c, geom.channels));
    }
    let pad = padding.resolve(geom.kernel)?;
    let g = PatchGeometry::new(input.shape(), geom.kernel, 1, pad)?;
    let k = bank.neurons();
    let positions = g.positions();
    let cols = g.cols();
    let mut out = Tensor::zeros(Shape::new(g.input.n, k, g.out_h, g.out_w));
    // one item at a time keeps the patch buffer small
    let one = PatchGeometry { input: g.input.with_batch(1), ..g };
    let mut buf = vec![0.0f32; positions * cols];
    for n in 0..g.input.n {
        let item = Tensor { shape: g.input.with_batch(1), data: input.item(n).to_vec() };
        buf.fill(0.0);
        fill_patches(&item, &one, &mut buf);
        let dst = out.item_mut(n);
        math::gemm(k, cols, positions, 1.0, bank.weights(), false, &buf, true, 0.0, dst);
    }
    Ok(out)
}

/// Pooling reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Pooling window configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    /// Stride-2 pooling whose padding makes even inputs halve exactly:
    /// kernel 4 and 3 pad by 1, kernel 2 does not pad.
    pub fn halving(kind: PoolKind, kernel: usize) -> Result<Self> {
        let padding = match kernel {
            2 => 0,
            3 | 4 => 1,
            _ => return Err(config_err!("pool kernel must be 2, 3 or 4, got {kernel}")),
        };
        Ok(Self { kind, kernel, stride: 2, padding })
    }

    pub fn output_size(&self, input: usize) -> Result<usize> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(config_err!("pool kernel and stride must be at least 1"));
        }
        if self.padding >= self.kernel {
            return Err(config_err!(
                "pool padding {} >= kernel {} leaves windows entirely in padding",
                self.padding,
                self.kernel
            ));
        }
        if input + 2 * self.padding < self.kernel {
            return Err(shape_err!(
                "pool input {input} (+{} padding) smaller than kernel {}",
                self.padding,
                self.kernel
            ));
        }
        Ok((input + 2 * self.padding - self.kernel) / self.stride + 1)
    }
}

/// Max or average pooling. Padded cells never win a max and are not counted
/// by the average.
pub fn pool(input: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    pool_with_routes(input, spec).map(|(t, _)| t)
}

/// Pooling that also returns, for max pooling, the flat input index chosen
/// by each output cell (empty for average pooling).
pub fn pool_with_routes(input: &Tensor, spec: &PoolSpec) -> Result<(Tensor, Vec<u32>)> {
    let s = input.shape();
    let (oh, ow) = (spec.output_size(s.h)?, spec.output_size(s.w)?);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut routes = match spec.kind {
        PoolKind::Max => vec![0u32; out_shape.len()],
        PoolKind::Avg => Vec::new(),
    };
    let src = input.data();
    let dst = out.data_mut();
    for nc in 0..s.n * s.c {
        let base = nc * s.h * s.w;
        for oy in 0..oh {
            let y0 = (oy * spec.stride) as isize - spec.padding as isize;
            let ys = y0.max(0) as usize..((y0 + spec.kernel as isize).min(s.h as isize)) as usize;
            for ox in 0..ow {
                let x0 = (ox * spec.stride) as isize - spec.padding as isize;
                let xs = x0.max(0) as usize..((x0 + spec.kernel as isize).min(s.w as isize)) as usize;
                let o = (nc * oh + oy) * ow + ox;
                match spec.kind {
                    PoolKind::Max => {
                        let mut best = f32::NEG_INFINITY;
                        let mut arg = base + ys.start * s.w + xs.start;
                        for y in ys.clone() {
                            for x in xs.clone() {
                                let v = src[base + y * s.w + x];
                                if v > best {
                                    best = v;
                                    arg = base + y * s.w + x;
                                }
                            }
                        }
                        dst[o] = best;
                        routes[o] = arg as u32;
                    }
                    PoolKind::Avg => {
                        let mut sum = 0.0f32;
                        for y in ys.clone() {
                            for x in xs.clone() {
                                sum += src[base + y * s.w + x];
                            }
                        }
                        dst[o] = sum / (ys.len() * xs.len()) as f32;
                    }
                }
            }
        }
    }
    Ok((out, routes))
}

/// Adjoint of pooling: max routes each gradient to its winning cell, average
/// spreads it uniformly over the window's non-padded cells.
pub fn pool_backward(grad_out: &Tensor, input_shape: Shape, spec: &PoolSpec, routes: &[u32]) -> Result<Tensor> {
    let (oh, ow) = (spec.output_size(input_shape.h)?, spec.output_size(input_shape.w)?);
    let expected = Shape::new(input_shape.n, input_shape.c, oh, ow);
    if grad_out.shape() != expected {
        return Err(shape_err!("pool gradient is {} but the pooled output is {expected}", grad_out.shape()));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let g = grad_out.data();
    let dst = grad_in.data_mut();
    match spec.kind {
        PoolKind::Max => {
            if routes.len() != g.len() {
                return Err(shape_err!("max-pool backward needs {} routes, got {}", g.len(), routes.len()));
            }
            for (o, &r) in routes.iter().enumerate() {
                dst[r as usize] += g[o];
            }
        }
        PoolKind::Avg => {
            let s = input_shape;
            for nc in 0..s.n * s.c {
                let base = nc * s.h * s.w;
                for oy in 0..oh {
                    let y0 = (oy * spec.stride) as isize - spec.padding as isize;
                    let ys = y0.max(0) as usize..((y0 + spec.kernel as isize).min(s.h as isize)) as usize;
                    for ox in 0..ow {
                        let x0 = (ox * spec.stride) as isize - spec.padding as isize;
                        let xs = x0.max(0) as usize..((x0 + spec.kernel as isize).min(s.w as isize)) as usize;
                        let share = g[(nc * oh + oy) * ow + ox] / (ys.len() * xs.len()) as f32;
                        for y in ys.clone() {
                            for x in xs.clone() {
                                dst[base + y * s.w + x] += share;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// Whether batch norm uses batch statistics (and updates running ones) or
/// the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch norm statistics. The affine parameters are fixed at
/// `gamma = 1`, `beta = 0` and never learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
    pub momentum: f32,
    /// Train-mode batches folded into the running statistics (or 1 when the
    /// statistics were loaded from elsewhere).
    pub tracked_batches: u64,
}

impl BatchNormState {
    pub const DEFAULT_EPS: f32 = 1e-5;
    pub const DEFAULT_MOMENTUM: f32 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self::with_params(channels, Self::DEFAULT_EPS, Self::DEFAULT_MOMENTUM)
    }

    pub fn with_params(channels: usize, eps: f32, momentum: f32) -> Self {
        Self { running_mean: vec![0.0; channels], running_var: vec![1.0; channels], eps, momentum, tracked_batches: 0 }
    }

    /// Statistics restored from storage; eval mode is allowed right away.
    pub fn from_running(mean: Vec<f32>, var: Vec<f32>, eps: f32, momentum: f32) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(shape_err!("{} running means but {} running variances", mean.len(), var.len()));
        }
        if var.iter().any(|v| !(*v >= 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(config_err!("running statistics must be finite with non-negative variance"));
        }
        Ok(Self { running_mean: mean, running_var: var, eps, momentum, tracked_batches: 1 })
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn has_statistics(&self) -> bool {
        self.tracked_batches > 0
    }

    /// Per-channel `(shift, scale)` such that eval output is `(x - shift) * scale`.
    pub fn eval_affine(&self) -> Result<(Vec<f32>, Vec<f32>)> {
        if !self.has_statistics() {
            return Err(Error::MissingStatistics);
        }
        let scale = self.running_var.iter().map(|v| 1.0 / math::sqrt(v + self.eps)).collect();
        Ok((self.running_mean.clone(), scale))
    }

    pub fn normalize_eval(&self, input: &Tensor) -> Result<Tensor> {
        self.check(input)?;
        let (shift, scale) = self.eval_affine()?;
        Ok(apply_affine(input, &shift, &scale))
    }

    pub fn normalize_train(&mut self, input: &Tensor) -> Result<Tensor> {
        self.check(input)?;
        let s = input.shape();
        let count = s.n * s.plane();
        if count < 2 {
            return Err(shape_err!("train-mode batch norm needs at least 2 values per channel, got {count}"));
        }
        let plane = s.plane();
        let mut shift = vec![0.0f32; s.c];
        let mut scale = vec![0.0f32; s.c];
        for c in 0..s.c {
            let mut sum = 0.0f64;
            for n in 0..s.n {
                let off = (n * s.c + c) * plane;
                sum += input.data()[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for n in 0..s.n {
                let off = (n * s.c + c) * plane;
                sq += input.data()[off..off + plane]
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = sq / count as f64;
            let unbiased = sq / (count - 1) as f64;
            shift[c] = mean as f32;
            scale[c] = (1.0 / libm::sqrt(var + self.eps as f64)) as f32;
            let m = self.momentum;
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean as f32;
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * unbiased as f32;
        }
        self.tracked_batches += 1;
        Ok(apply_affine(input, &shift, &scale))
    }

    fn check(&self, input: &Tensor) -> Result<()> {
        if input.shape().c != self.channels() {
            return Err(shape_err!("batch norm over {} channels got input {}", self.channels(), input.shape()));
        }
        Ok(())
    }
}

fn apply_affine(input: &Tensor, shift: &[f32], scale: &[f32]) -> Tensor {
    let s = input.shape();
    let plane = s.plane();
    let mut out = input.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let c = i % s.c;
        let (m, k) = (shift[c], scale[c]);
        for v in chunk {
            *v = (*v - m) * k;
        }
    }
    out
}

/// Batch norm in the requested mode; train mode updates the running statistics.
pub fn batch_norm(input: &Tensor, state: &mut BatchNormState, mode: Mode) -> Result<Tensor> {
    match mode {
        Mode::Train => state.normalize_train(input),
        Mode::Eval => state.normalize_eval(input),
    }
}
