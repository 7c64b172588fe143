//! Frozen-feature extraction for the classifier head, stored in half
//! precision to keep full-width CIFAR-10 features in memory.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use half::f16;
use hebbnet_core::data::{augment, AugmentFlags, Dataset};
use hebbnet_core::training::FeatureSource;
use hebbnet_core::{rng, Model};
use rayon::prelude::*;

use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HalfFeatures {
    data: Vec<f16>,
    dim: usize,
    labels: Vec<u16>,
    num_classes: usize,
}

impl HalfFeatures {
    /// Eval-mode features after `depth` layers for every item of `data`.
    /// Batches are spread over the current rayon pool; the result does not
    /// depend on the number of threads.
    pub fn extract(model: &Model, data: &Dataset, depth: usize, batch_size: usize) -> Result<Self> {
        let labels = data.labels().ok_or_else(|| config_err!("feature extraction needs labels"))?.to_vec();
        if batch_size == 0 {
            return Err(config_err!("batch size must be at least 1"));
        }
        let dim = model.feature_dim(depth)?;
        let mut out = vec![f16::ZERO; data.len() * dim];
        out.par_chunks_mut(batch_size * dim).enumerate().try_for_each(|(b, chunk)| -> Result<()> {
            let start = b * batch_size;
            let idx: Vec<usize> = (start..start + chunk.len() / dim).collect();
            let (x, _) = data.batch(&idx);
            let f = model.forward(&x, depth)?;
            for (o, &v) in chunk.iter_mut().zip(f.data()) {
                *o = f16::from_f32(v);
                if !o.is_finite() {
                    return Err(Error::Numeric(format!("feature {v} of item {} overflows half precision", start)));
                }
            }
            Ok(())
        })?;
        Ok(Self { data: out, dim, labels, num_classes: data.num_classes() })
    }

    pub fn row(&self, i: usize) -> &[f16] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// One CSV row per item: label followed by the feature values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim).map(|j| format!("f{j}")));
        let to_err = |e: csv::Error| Error::io(path, e.into());
        w.write_record(&header).map_err(to_err)?;
        for i in 0..self.len() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_f32().to_string()));
            w.write_record(&rec).map_err(to_err)?;
        }
        w.into_inner().map_err(|e| Error::io(path, e.into_error()))?.flush().map_err(|e| Error::io(path, e))
    }
}

impl FeatureSource for HalfFeatures {
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
            for (o, v) in out[j * self.dim..(j + 1) * self.dim].iter_mut().zip(self.row(i)) {
                *o = v.to_f32();
            }
            labels[j] = self.labels[i];
        }
    }
}

/// Features computed per batch from augmented images; each call to
/// `fill_batch` draws from the next augmentation stream.
pub struct AugmentedFeatures<'a> {
    model: &'a Model,
    data: &'a Dataset,
    depth: usize,
    dim: usize,
    flags: AugmentFlags,
    seed: u64,
    calls: AtomicU64,
}

impl<'a> AugmentedFeatures<'a> {
    pub fn new(model: &'a Model, data: &'a Dataset, depth: usize, flags: AugmentFlags, seed: u64) -> Result<Self> {
        if data.labels().is_none() {
            return Err(config_err!("feature extraction needs labels"));
        }
        let dim = model.feature_dim(depth)?;
        Ok(Self { model, data, depth, dim, flags, seed, calls: AtomicU64::new(0) })
    }
}

impl FeatureSource for AugmentedFeatures<'_> {
    fn len(&self) -> usize {
        self.data.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    fn fill_batch(&self, indices: &[usize], out: &mut [f32], labels: &mut [u16]) {
        let call = self.calls.fetch_add(1, Ordering::Relaxed);
        let (mut x, l) = self.data.batch(indices);
        augment(&mut x, self.flags, &mut rng::stream(self.seed, rng::tags::AUGMENT, call));
        let f = self.model.forward(&x, self.depth).expect("model accepts dataset items");
        out[..f.data().len()].copy_from_slice(f.data());
        labels[..indices.len()].copy_from_slice(&l.expect("labels checked at construction"));
    }
}
