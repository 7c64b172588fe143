//! Checkpoint directories: `manifest.json` plus little-endian `f32` blobs,
//! each listed with its SHA-256.

use std::fs;
use std::path::Path;

use hebbnet_core::data::NormalizationStats;
use hebbnet_core::network::Layer;
use hebbnet_core::tensor::BatchNormState;
use hebbnet_core::training::ClassifierHead;
use hebbnet_core::{ArchitectureSpec, Model, NeuronBank};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::DatasetKind;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    pub file: String,
    pub sha256: String,
    pub values: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub weights: BlobRef,
    /// Running mean followed by running variance.
    pub batch_norm: BlobRef,
    pub bn_eps: f32,
    pub bn_momentum: f32,
    pub bn_tracked_batches: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEntry {
    /// Weights (`classes x dim`) followed by the biases.
    pub parameters: BlobRef,
    pub classes: usize,
    pub dim: usize,
    pub dropout: f32,
    /// Number of layers feeding the head.
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub dataset: Option<DatasetKind>,
    pub architecture: ArchitectureSpec,
    pub normalization: Option<NormalizationStats>,
    pub layers: Vec<LayerEntry>,
    pub head: Option<HeadEntry>,
}

/// A trained head together with the depth of the features it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHead {
    pub head: ClassifierHead,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub dataset: Option<DatasetKind>,
    pub normalization: Option<NormalizationStats>,
    pub head: Option<ProbeHead>,
}

fn encode_f32(parts: &[&[f32]]) -> Vec<u8> {
    parts.iter().flat_map(|p| p.iter().flat_map(|v| v.to_le_bytes())).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_blob(dir: &Path, file: String, parts: &[&[f32]]) -> Result<BlobRef> {
    let bytes = encode_f32(parts);
    let path = dir.join(&file);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    Ok(BlobRef { sha256: sha256_hex(&bytes), values: bytes.len() / 4, file })
}

fn read_blob(dir: &Path, blob: &BlobRef) -> Result<Vec<f32>> {
    let path = dir.join(&blob.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if sha256_hex(&bytes) != blob.sha256 {
        return Err(Error::data(&path, "checksum mismatch"));
    }
    if bytes.len() != blob.values * 4 {
        return Err(Error::data(&path, format!("{} bytes, manifest lists {} values", bytes.len(), blob.values)));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self { model, dataset: None, normalization: None, head: None }
    }

    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layers = Vec::with_capacity(self.model.depth());
        for (i, l) in self.model.layers.iter().enumerate() {
            let weights = write_blob(dir, format!("layer{}.weights", i + 1), &[l.bank.weights()])?;
            let batch_norm = write_blob(dir, format!("layer{}.bn", i + 1), &[&l.bn.running_mean, &l.bn.running_var])?;
            layers.push(LayerEntry {
                weights,
                batch_norm,
                bn_eps: l.bn.eps,
                bn_momentum: l.bn.momentum,
                bn_tracked_batches: l.bn.tracked_batches,
            });
        }
        let head = match &self.head {
            Some(p) => Some(HeadEntry {
                parameters: write_blob(dir, "head.params".into(), &[&p.head.weights, &p.head.bias])?,
                classes: p.head.classes,
                dim: p.head.dim,
                dropout: p.head.dropout,
                depth: p.depth,
            }),
            None => None,
        };
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            seed: self.model.seed,
            dataset: self.dataset,
            architecture: self.model.arch.clone(),
            normalization: self.normalization.clone(),
            layers,
            head,
        };
        let path = dir.join(MANIFEST);
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::io(&path, e.into()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::data(&path, e.to_string()))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::data(&path, format!("format version {} is not {FORMAT_VERSION}", m.format_version)));
        }
        if m.layers.len() != m.architecture.layers.len() {
            return Err(Error::data(&path, "layer entries do not match the architecture"));
        }
        let mut layers = Vec::with_capacity(m.layers.len());
        for (entry, spec) in m.layers.iter().zip(&m.architecture.layers) {
            let bank = NeuronBank::from_weights(spec.kernel_geometry(), read_blob(dir, &entry.weights)?)?;
            let stats = read_blob(dir, &entry.batch_norm)?;
            let (mean, var) = stats.split_at(stats.len() / 2);
            let mut bn = BatchNormState::from_running(mean.to_vec(), var.to_vec(), entry.bn_eps, entry.bn_momentum)?;
            bn.tracked_batches = entry.bn_tracked_batches;
            layers.push(Layer::new(*spec, bank, bn)?);
        }
        let model = Model::from_layers(m.architecture.clone(), layers, m.seed)?;
        let head = match &m.head {
            Some(h) => {
                let mut params = read_blob(dir, &h.parameters)?;
                if params.len() != h.classes * (h.dim + 1) {
                    return Err(Error::data(dir.join(&h.parameters.file), "head size does not match classes and dim"));
                }
                let bias = params.split_off(h.classes * h.dim);
                let head = ClassifierHead { classes: h.classes, dim: h.dim, weights: params, bias, dropout: h.dropout };
                Some(ProbeHead { head, depth: h.depth })
            }
            None => None,
        };
        Ok(Self { model, dataset: m.dataset, normalization: m.normalization, head })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hebbnet_core::network::{build_architecture, ArchitectureRequest};

    #[test]
    fn tampered_blob_is_rejected() {
        let mut req = ArchitectureRequest::new(8, 3, 4, 2);
        req.stop_resolution = 2;
        let model = Model::init(build_architecture(&req).unwrap(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        Checkpoint::new(model).save(dir.path()).unwrap();
        let blob = dir.path().join("layer1.weights");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[0] ^= 1;
        fs::write(&blob, bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Data { .. })));
    }
}
