//! In-memory labelled image sets: standard-score normalization, seeded
//! splits and batching, augmentation.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::rng;
use crate::tensor::{Shape, Tensor};

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormalizationStats {
    /// Lower bound applied to the standard deviation.
    pub const STD_FLOOR: f32 = 1e-6;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Option<Vec<u16>>,
    num_classes: usize,
    normalization: Option<NormalizationStats>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Option<Vec<u16>>, num_classes: usize) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != images.shape().n {
                return Err(shape_err!("{} labels for {} images", l.len(), images.shape().n));
            }
            if let Some(bad) = l.iter().find(|&&v| v as usize >= num_classes) {
                return Err(config_err!("label {bad} outside [0, {num_classes})"));
            }
        }
        Ok(Self { images, labels, num_classes, normalization: None })
    }

    pub fn len(&self) -> usize {
        self.images.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of a single item (batch dimension 1).
    pub fn item_shape(&self) -> Shape {
        self.images.shape().with_batch(1)
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Statistics the data was normalized with, if it was.
    pub fn normalization(&self) -> Option<&NormalizationStats> {
        self.normalization.as_ref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization.is_some()
    }

    pub fn compute_stats(&self) -> NormalizationStats {
        let s = self.images.shape();
        let plane = s.plane();
        let mut mean = vec![0.0f32; s.c];
        let mut std = vec![0.0f32; s.c];
        let count = (s.n * plane).max(1) as f64;
        for c in 0..s.c {
            let channel = || (0..s.n).flat_map(move |n| self.images.item(n)[c * plane..(c + 1) * plane].iter());
            let m = channel().map(|&v| v as f64).sum::<f64>() / count;
            let var = channel().map(|&v| (v as f64 - m) * (v as f64 - m)).sum::<f64>() / count;
            mean[c] = m as f32;
            std[c] = (libm::sqrt(var) as f32).max(NormalizationStats::STD_FLOOR);
        }
        NormalizationStats { mean, std }
    }

    /// Standard-score normalization with `stats`, or with this set's own
    /// statistics when none are given. A set can only be normalized once.
    pub fn normalize(mut self, stats: Option<&NormalizationStats>) -> Result<Self> {
        if self.is_normalized() {
            return Err(config_err!("dataset is already normalized"));
        }
        let stats = match stats {
            Some(s) => s.clone(),
            None => self.compute_stats(),
        };
        let s = self.images.shape();
        if stats.mean.len() != s.c || stats.std.len() != s.c {
            return Err(shape_err!("statistics for {} channels applied to {} channels", stats.mean.len(), s.c));
        }
        let plane = s.plane();
        for (i, chunk) in self.images.data_mut().chunks_mut(plane).enumerate() {
            let c = i % s.c;
            let (m, inv) = (stats.mean[c], 1.0 / stats.std[c].max(NormalizationStats::STD_FLOOR));
            for v in chunk {
                *v = (*v - m) * inv;
            }
        }
        self.normalization = Some(stats);
        Ok(self)
    }

    /// Copies the listed items (in that order) into a new set.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
            normalization: self.normalization.clone(),
        }
    }

    /// First `n` items (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Seeded split into `(train, validation)` with `fraction` of the items
    /// going to validation.
    pub fn split(&self, fraction: f32, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(config_err!("validation fraction must lie in [0, 1), got {fraction}"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, rng::tags::SPLIT, 0));
        let n_val = libm::round(self.len() as f64 * fraction as f64) as usize;
        let (val, train) = order.split_at(n_val);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.subset(&train), self.subset(&val)))
    }

    /// Images and labels of the listed items.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Option<Vec<u16>>) {
        (self.images.select(indices), self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()))
    }

    /// Mini-batches in a seeded order (a fresh permutation per epoch).
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<'_>> {
        Ok(Batches { data: self, order: BatchOrder::new(self.len(), batch_size, seed, epoch)? })
    }
}

/// Seeded index batches over `0..len`; the last batch may be short.
#[derive(Debug, Clone)]
pub struct BatchOrder {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchOrder {
    pub fn new(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(config_err!("batch size must be at least 1"));
        }
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng::stream(seed, rng::tags::SHUFFLE, epoch));
        Ok(Self { order, batch_size, pos: 0 })
    }

    /// Batches in natural order, without shuffling.
    pub fn sequential(len: usize, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(config_err!("batch size must be at least 1"));
        }
        Ok(Self { order: (0..len).collect(), batch_size, pos: 0 })
    }

    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchOrder {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(b)
    }
}

pub struct Batches<'a> {
    data: &'a Dataset,
    order: BatchOrder,
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Option<Vec<u16>>);

    fn next(&mut self) -> Option<Self::Item> {
        self.order.next().map(|idx| self.data.batch(&idx))
    }
}

/// Random transformations applied to a training batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentFlags {
    pub hflip: bool,
    /// Reflection padding for random crops; 0 disables cropping.
    pub crop_padding: usize,
}

/// Flips each item horizontally with probability 1/2 and crops it at a
/// random offset out of a reflection-padded copy.
pub fn augment<R: rand::Rng + ?Sized>(batch: &mut Tensor, flags: AugmentFlags, rng: &mut R) {
    let s = batch.shape();
    for n in 0..s.n {
        if flags.hflip && rng.random::<bool>() {
            hflip(batch.item_mut(n), s);
        }
        if flags.crop_padding > 0 {
            let span = 2 * flags.crop_padding + 1;
            let dy = rng.random_range(0..span) as isize - flags.crop_padding as isize;
            let dx = rng.random_range(0..span) as isize - flags.crop_padding as isize;
            shift_reflect(batch.item_mut(n), s, dy, dx);
        }
    }
}

/// Mirrors one item left to right.
pub fn hflip(item: &mut [f32], s: Shape) {
    for row in item.chunks_mut(s.w) {
        row.reverse();
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Crop of the reflection-padded item whose top-left corner sits at `(dy, dx)`
/// relative to the original.
fn shift_reflect(item: &mut [f32], s: Shape, dy: isize, dx: isize) {
    if dy == 0 && dx == 0 {
        return;
    }
    let src = item.to_vec();
    let plane = s.plane();
    for c in 0..s.c {
        for y in 0..s.h {
            let sy = reflect(y as isize + dy, s.h);
            for x in 0..s.w {
                let sx = reflect(x as isize + dx, s.w);
                item[c * plane + y * s.w + x] = src[c * plane + sy * s.w + sx];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy(n: usize, c: usize) -> Dataset {
        let shape = Shape::new(n, c, 3, 3);
        let data = (0..shape.len()).map(|i| ((i * 37) % 11) as f32 * 0.3 + (i % c) as f32).collect();
        Dataset::new(Tensor::new(shape, data).unwrap(), Some((0..n).map(|i| (i % 10) as u16).collect()), 10).unwrap()
    }

    #[test]
    fn rejects_bad_labels() {
        let t = Tensor::zeros(Shape::new(2, 1, 2, 2));
        assert!(Dataset::new(t.clone(), Some(vec![0, 10]), 10).is_err());
        assert!(Dataset::new(t, Some(vec![0]), 10).is_err());
    }

    #[test]
    fn normalization_contract() {
        let train = toy(40, 3);
        let test = toy(10, 3);
        let train_n = train.normalize(None).unwrap();
        let stats = train_n.normalization().unwrap().clone();
        let st = train_n.compute_stats();
        for c in 0..3 {
            assert!(st.mean[c].abs() < 1e-4);
            assert!((st.std[c] - 1.0).abs() < 1e-3);
        }
        let test_n = test.normalize(Some(&stats)).unwrap();
        assert_eq!(test_n.normalization(), Some(&stats));
        assert!(train_n.clone().normalize(Some(&stats)).is_err());
        // constant channel maps to zeros
        let flat = Dataset::new(Tensor::new(Shape::new(3, 1, 2, 2), vec![0.4; 12]).unwrap(), None, 1).unwrap();
        assert!(flat.normalize(None).unwrap().images().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn test_split_with_train_stats_is_not_centered() {
        let train = toy(30, 1);
        let shape = Shape::new(5, 1, 3, 3);
        let other = Dataset::new(Tensor::new(shape, vec![9.0; shape.len()]).unwrap(), None, 10).unwrap();
        let stats = train.compute_stats();
        let n = other.normalize(Some(&stats)).unwrap();
        assert!(n.compute_stats().mean[0].abs() > 0.1);
    }

    #[test]
    fn batch_sizes_and_seeding() {
        let sizes: Vec<usize> = BatchOrder::new(25, 10, 1, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, [10, 10, 5]);
        let a: Vec<Vec<usize>> = BatchOrder::new(1000, 50, 7, 0).unwrap().collect();
        let b: Vec<Vec<usize>> = BatchOrder::new(1000, 50, 7, 0).unwrap().collect();
        let c: Vec<Vec<usize>> = BatchOrder::new(1000, 50, 8, 0).unwrap().collect();
        let d: Vec<Vec<usize>> = BatchOrder::new(1000, 50, 7, 1).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert!(BatchOrder::new(3, 0, 0, 0).is_err());
        let ds = toy(7, 2);
        for (imgs, labels) in ds.batches(3, 0, 0).unwrap() {
            assert_eq!(imgs.shape().with_batch(1), ds.item_shape());
            assert_eq!(labels.unwrap().len(), imgs.shape().n);
        }
    }

    #[test]
    fn split_partitions() {
        let ds = toy(50, 1);
        let (tr, va) = ds.split(0.2, 3).unwrap();
        assert_eq!((tr.len(), va.len()), (40, 10));
        let (tr2, _) = ds.split(0.2, 3).unwrap();
        assert_eq!(tr, tr2);
        assert!(ds.split(1.0, 0).is_err());
    }

    #[test]
    fn augment_identities() {
        let ds = toy(4, 3);
        let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut b = ds.images().clone();
        augment(&mut b, AugmentFlags::default(), &mut g);
        assert_eq!(&b, ds.images());
        augment(&mut b, AugmentFlags { hflip: false, crop_padding: 0 }, &mut g);
        assert_eq!(&b, ds.images());
        let s = b.shape();
        hflip(b.item_mut(0), s);
        assert_ne!(&b, ds.images());
        hflip(b.item_mut(0), s);
        assert_eq!(&b, ds.images());
        // crops keep the shape; reflection indices stay in range
        let mut c = ds.images().clone();
        augment(&mut c, AugmentFlags { hflip: true, crop_padding: 2 }, &mut g);
        assert_eq!(c.shape(), ds.images().shape());
        assert_eq!(reflect(-1, 3), 1);
        assert_eq!(reflect(3, 3), 1);
        assert_eq!(reflect(-2, 3), 2);
    }
}
