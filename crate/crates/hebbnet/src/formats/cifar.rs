//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! channel-planar pixels.

use std::path::Path;

use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 1 + PIXELS;
pub const PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Records {
    pub labels: Vec<u8>,
    /// `labels.len() * PIXELS` bytes.
    pub pixels: Vec<u8>,
}

impl Records {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn parse_into(&mut self, bytes: &[u8], path: &Path) -> Result<()> {
        if !bytes.len().is_multiple_of(RECORD_LEN) {
            return Err(Error::data(path, format!("length {} is not a multiple of {RECORD_LEN}", bytes.len())));
        }
        for rec in bytes.chunks_exact(RECORD_LEN) {
            if rec[0] > 9 {
                let at = self.labels.len();
                return Err(Error::data(path, format!("record {at} has label {}", rec[0])));
            }
            self.labels.push(rec[0]);
            self.pixels.extend_from_slice(&rec[1..]);
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * RECORD_LEN);
        for (l, px) in self.labels.iter().zip(self.pixels.chunks_exact(PIXELS)) {
            out.push(*l);
            out.extend_from_slice(px);
        }
        out
    }
}

pub fn read(paths: &[impl AsRef<Path>]) -> Result<Records> {
    let mut r = Records::default();
    for p in paths {
        let p = p.as_ref();
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        r.parse_into(&bytes, p)?;
    }
    Ok(r)
}
