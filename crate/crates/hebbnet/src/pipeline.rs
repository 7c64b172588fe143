//! End-to-end runs: load, greedy plasticity, linear probes, evaluation.

use std::path::{Path, PathBuf};

use hebbnet_core::analysis::{count_r1, R1Report};
use hebbnet_core::data::{AugmentFlags, Dataset};
use hebbnet_core::training::{
    calibrate_batch_norm, evaluate, train_classifier, train_unsupervised, EpochMetrics, EvalReport, FeatureSource,
    MetricsRecord, UnsupervisedReport,
};
use hebbnet_core::Model;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::ProbeHead;
use crate::config::RunConfig;
use crate::datasets::{data_root, Split};
use crate::error::{config_err, Error, Result};
use crate::features::{AugmentedFeatures, HalfFeatures};

/// Normalized splits: statistics come from the training part only.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Dataset,
}

/// Directory holding `cfg.dataset`, from the config or the data root.
pub fn dataset_dir(cfg: &RunConfig, root: Option<&Path>) -> Result<PathBuf> {
    if let Some(d) = &cfg.data_dir {
        return Ok(d.clone());
    }
    data_root(root)
        .map(|r| r.join(cfg.dataset.subdir()))
        .ok_or_else(|| config_err!("no dataset directory: pass --data-dir or set {}", crate::datasets::DATA_DIR_ENV))
}

pub fn load_splits(cfg: &RunConfig, root: Option<&Path>) -> Result<Splits> {
    let dir = dataset_dir(cfg, root)?;
    if !dir.is_dir() {
        return Err(Error::data(&dir, "dataset directory does not exist"));
    }
    let mut train = cfg.dataset.load(&dir, Split::Train)?;
    let mut test = cfg.dataset.load(&dir, Split::Test)?;
    if let Some(n) = cfg.train_limit {
        train = train.head(n);
    }
    if let Some(n) = cfg.test_limit {
        test = test.head(n);
    }
    let (train, validation) = if cfg.validation_fraction > 0.0 {
        let (t, v) = train.split(cfg.validation_fraction, cfg.seed)?;
        (t, Some(v))
    } else {
        (train, None)
    };
    let train = train.normalize(None)?;
    let stats = train.normalization().cloned();
    let validation = validation.map(|v| v.normalize(stats.as_ref())).transpose()?;
    let test = test.normalize(stats.as_ref())?;
    Ok(Splits { train, validation, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub depth: usize,
    pub feature_dim: usize,
    pub train_accuracy: f32,
    pub validation_accuracy: Option<f32>,
    pub test_accuracy: f32,
    pub test_per_class: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Model,
    pub unsupervised: Option<UnsupervisedReport>,
    pub r1: R1Report,
    pub probes: Vec<ProbeResult>,
    /// Head of the deepest probe.
    pub head: Option<ProbeHead>,
}

/// Builds and trains (or only calibrates, for untrained runs) the network.
pub fn train_model(
    cfg: &RunConfig,
    train: &Dataset,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<(Model, Option<UnsupervisedReport>)> {
    let arch = cfg.build_architecture()?;
    let mut model = Model::init(arch, cfg.seed)?;
    let mut ucfg = cfg.unsupervised.clone();
    ucfg.seed = cfg.seed;
    if cfg.untrained {
        let batches = ucfg.max_iterations;
        calibrate_batch_norm(&mut model, train, ucfg.batch_size, batches, cfg.seed)?;
        return Ok((model, None));
    }
    let report = train_unsupervised(&mut model, train, &ucfg, sink)?;
    Ok((model, Some(report)))
}

/// Fits a linear head on the frozen features after `depth` layers and
/// scores it on the test split.
pub fn probe(
    cfg: &RunConfig,
    model: &Model,
    splits: &Splits,
    depth: usize,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<(ProbeResult, ProbeHead)> {
    let val =
        splits.validation.as_ref().map(|v| HalfFeatures::extract(model, v, depth, cfg.feature_batch)).transpose()?;
    let val_source = val.as_ref().map(|v| v as &dyn FeatureSource);
    let mut scfg = cfg.supervised.clone();
    scfg.seed = cfg.seed;
    let mut on_epoch = |m: &EpochMetrics| sink(&m.record(depth));
    let (head, history) = if cfg.augment == AugmentFlags::default() {
        let train = HalfFeatures::extract(model, &splits.train, depth, cfg.feature_batch)?;
        train_classifier(&train, val_source, &scfg, &mut on_epoch)?
    } else {
        let train = AugmentedFeatures::new(model, &splits.train, depth, cfg.augment, cfg.seed)?;
        train_classifier(&train, val_source, &scfg, &mut on_epoch)?
    };
    let last = *history.last().ok_or_else(|| config_err!("classifier ran no epochs"))?;
    drop(val);
    let test = HalfFeatures::extract(model, &splits.test, depth, cfg.feature_batch)?;
    let EvalReport { accuracy, per_class, .. } = evaluate(&head, &test)?;
    let result = ProbeResult {
        depth,
        feature_dim: head.dim,
        train_accuracy: last.train_acc,
        validation_accuracy: last.val_acc,
        test_accuracy: accuracy,
        test_per_class: per_class,
    };
    Ok((result, ProbeHead { head, depth }))
}

pub fn run(cfg: &RunConfig, splits: &Splits, sink: &mut dyn FnMut(&MetricsRecord)) -> Result<RunOutcome> {
    cfg.validate()?;
    let (model, unsupervised) = train_model(cfg, &splits.train, sink)?;
    let r1 = count_r1(&model, cfg.unsupervised.r1_tolerance)?;
    let mut probes = Vec::new();
    let mut head = None;
    for depth in cfg.probe_depths(model.depth())? {
        let (p, h) = probe(cfg, &model, splits, depth, sink)?;
        probes.push(p);
        head = Some(h);
    }
    Ok(RunOutcome { model, unsupervised, r1, probes, head })
}

/// Hex SHA-256 of the config's JSON form.
pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("run config serializes");
    hex::encode(Sha256::digest(json))
}

/// Runs `f` on a rayon pool with `threads` workers (the global pool when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| config_err!("thread pool: {e}"))?;
            Ok(pool.install(f))
        }
    }
}
