//! Metrics CSV: `step,layer,mean_radius,r1_fraction,lr,loss,train_acc,val_acc`,
//! empty cells for values a row does not carry.

use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hebbnet_core::training::MetricsRecord;

use crate::error::{Error, Result};

pub const HEADER: [&str; 8] = ["step", "layer", "mean_radius", "r1_fraction", "lr", "loss", "train_acc", "val_acc"];

pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    /// Appends to `path`, writing the header only when the file is new or empty.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let fresh = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        let inner = csv::WriterBuilder::new().has_headers(fresh).from_writer(BufWriter::new(file));
        Ok(Self { path: path.to_path_buf(), inner })
    }

    pub fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.inner.serialize(rec).map_err(|e| Error::io(&self.path, e.into()))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize().map(|row| row.map_err(|e| Error::data(path, e.to_string()))).collect()
}
