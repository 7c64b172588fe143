//! MNIST and CIFAR-10 loaders producing core [`Dataset`]s with pixels
//! scaled to `[0, 1]`.

use std::path::{Path, PathBuf};

use hebbnet_core::data::Dataset;
use hebbnet_core::{Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{cifar, idx};

/// Environment variable naming the default dataset root.
pub const DATA_DIR_ENV: &str = "HEBBNET_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl DatasetKind {
    /// Directory of this dataset below a data root.
    pub fn subdir(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
        }
    }

    pub fn load(self, dir: &Path, split: Split) -> Result<Dataset> {
        match self {
            DatasetKind::Mnist => load_mnist(dir, split),
            DatasetKind::Cifar10 => load_cifar10(dir, split),
        }
    }
}

/// Data root from `explicit` or the environment.
pub fn data_root(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

fn existing(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::data(dir.join(stem), "file not found (plain or .gz)"))
}

fn to_unit(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32 / 255.0).collect()
}

pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let img_path = existing(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let lbl_path = existing(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let images = idx::read(&img_path, idx::IMAGES_MAGIC)?;
    let labels = idx::read(&lbl_path, idx::LABELS_MAGIC)?;
    let [n, h, w] = images.dims[..] else {
        return Err(Error::data(&img_path, format!("expected 3 dimensions, found {:?}", images.dims)));
    };
    if labels.dims != [n] {
        return Err(Error::data(&lbl_path, format!("{:?} labels for {n} images", labels.dims)));
    }
    if let Some(bad) = labels.data.iter().find(|&&l| l > 9) {
        return Err(Error::data(&lbl_path, format!("label {bad} outside 0..10")));
    }
    let tensor = Tensor::new(Shape::new(n, 1, h, w), to_unit(&images.data))?;
    Ok(Dataset::new(tensor, Some(labels.data.iter().map(|&l| l as u16).collect()), 10)?)
}

pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    if let Some(missing) = files.iter().find(|p| !p.is_file()) {
        return Err(Error::data(missing, "file not found"));
    }
    let records = cifar::read(&files)?;
    let tensor = Tensor::new(Shape::new(records.len(), 3, 32, 32), to_unit(&records.pixels))?;
    Ok(Dataset::new(tensor, Some(records.labels.iter().map(|&l| l as u16).collect()), 10)?)
}
