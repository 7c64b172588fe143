//! Command line: `train`, `eval`, `analyze`, `bench`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hebbnet_core::analysis::{self, count_r1, grid_shape, receptive_field_pgd, tile_images, PgdConfig};
use hebbnet_core::data::Dataset;
use hebbnet_core::plasticity::PlasticityMode;
use hebbnet_core::training::evaluate;
use hebbnet_core::Model;
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{ArchitectureConfig, RunConfig};
use crate::datasets::{DatasetKind, Split};
use crate::error::{config_err, Error, Result};
use crate::features::HalfFeatures;
use crate::formats::ppm;
use crate::metrics::MetricsWriter;
use crate::pipeline::{self, config_hash, dataset_dir, load_splits, with_threads};

#[derive(Debug, Parser)]
#[command(name = "hebbnet", version, about = "Soft winner-take-all Hebbian networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Unsupervised training followed by linear probes.
    Train(TrainArgs),
    /// Accuracy of a saved checkpoint's head.
    Eval(EvalArgs),
    /// R1 counts, receptive fields, top patches or feature export.
    Analyze(AnalyzeArgs),
    /// SoftHebb vs hard-WTA vs random weights on one layer.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(alias = "soft_hebbian")]
    SoftHebb,
    #[value(alias = "soft_anti_hebbian")]
    SoftAnti,
    #[value(alias = "hard_wta")]
    Hard,
}

impl From<ModeArg> for PlasticityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::SoftHebb => PlasticityMode::SoftHebbian,
            ModeArg::SoftAnti => PlasticityMode::SoftAntiHebbian,
            ModeArg::Hard => PlasticityMode::HardWta,
        }
    }
}

/// Options shared by the commands that build a run configuration.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Named preset (table-a2-mnist, table-a2-cifar, fc-mnist-2000).
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Dataset root (defaults to $HEBBNET_DATA_DIR).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Maximum number of layers.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub first_width: Option<usize>,
    #[arg(long)]
    pub width_factor: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Probe randomly initialized weights instead of training them.
    #[arg(long)]
    pub untrained: bool,
    /// Inverse temperature for every layer.
    #[arg(long)]
    pub inverse_temperature: Option<f32>,
    #[arg(long)]
    pub unsupervised_epochs: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub classifier_epochs: Option<usize>,
    /// Comma-separated 1-based depths to probe.
    #[arg(long, value_delimiter = ',')]
    pub probe_layers: Option<Vec<usize>>,
    #[arg(long)]
    pub validation_fraction: Option<f32>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Write results.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeTask {
    R1,
    Rf,
    Patches,
    ExportFeatures,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub task: AnalyzeTask,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// 1-based layer.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    /// `all` or a comma-separated list of neuron indices.
    #[arg(long, default_value = "all")]
    pub neurons: String,
    /// Patches per neuron.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = analysis::DEFAULT_R1_TOLERANCE)]
    pub tolerance: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs/analysis")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value = "runs/bench")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

/// Config from preset or file (or a one-layer CIFAR-10 default), then flag overrides.
pub fn resolve_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(p), _) => RunConfig::preset(p)?,
        (None, Some(path)) => RunConfig::from_json_file(path)?,
        (None, None) => {
            let mut c = RunConfig::preset("table-a2-cifar")?;
            if let Some(d) = a.dataset {
                c.dataset = d;
            }
            c
        }
    };
    if let Some(d) = a.dataset {
        cfg.dataset = d;
    }
    if let ArchitectureConfig::Convolutional { first_width, width_factor, max_layers, layers, .. } =
        &mut cfg.architecture
    {
        if let Some(n) = a.layers {
            *max_layers = Some(n);
        }
        if let Some(w) = a.first_width {
            *first_width = w;
        }
        if let Some(f) = a.width_factor {
            *width_factor = f;
        }
        if let Some(t) = a.inverse_temperature {
            for l in layers.iter_mut() {
                l.plasticity.inverse_temperature = t;
            }
        }
    } else {
        if a.layers.is_some_and(|n| n != 1) || a.width_factor.is_some() {
            return Err(config_err!("a fully connected run has exactly one layer"));
        }
        if let ArchitectureConfig::FullyConnected { width, plasticity, .. } = &mut cfg.architecture {
            if let Some(w) = a.first_width {
                *width = w;
            }
            if let Some(t) = a.inverse_temperature {
                plasticity.inverse_temperature = t;
            }
        }
    }
    if let Some(m) = a.mode {
        cfg.plasticity_mode = Some(m.into());
    }
    cfg.untrained |= a.untrained;
    if let Some(e) = a.unsupervised_epochs {
        cfg.unsupervised.epochs = e;
    }
    if a.max_iterations.is_some() {
        cfg.unsupervised.max_iterations = a.max_iterations;
    }
    if let Some(e) = a.classifier_epochs {
        cfg.supervised.epochs = e;
    }
    if let Some(p) = &a.probe_layers {
        cfg.probe_layers = p.clone();
    }
    if let Some(v) = a.validation_fraction {
        cfg.validation_fraction = v;
    }
    if a.train_limit.is_some() {
        cfg.train_limit = a.train_limit;
    }
    if a.test_limit.is_some() {
        cfg.test_limit = a.test_limit;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    cfg.deterministic |= a.deterministic;
    if cfg.deterministic {
        cfg.threads = Some(1);
    }
    if let Some(d) = &a.data_dir {
        cfg.data_dir = Some(d.join(cfg.dataset.subdir())).filter(|p| p.is_dir()).or(Some(d.clone()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn run_manifest(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "deterministic": cfg.deterministic,
        "config": cfg,
    })
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.run)?;
    // load before touching the output directory so that data errors leave nothing behind
    let splits = load_splits(&cfg, None)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("manifest.json"), &run_manifest(&cfg))?;
    let mut metrics = MetricsWriter::append(&a.out.join("metrics.csv"))?;
    let mut sink_err = None;
    let outcome = with_threads(cfg.threads, || {
        pipeline::run(&cfg, &splits, &mut |rec| {
            if let Err(e) = metrics.write(rec) {
                sink_err.get_or_insert(e);
            }
        })
    })??;
    metrics.flush()?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    let mut ck = Checkpoint::new(outcome.model.clone());
    ck.dataset = Some(cfg.dataset);
    ck.normalization = splits.train.normalization().cloned();
    ck.head = outcome.head.clone();
    ck.save(&a.out.join("checkpoint"))?;
    let test_accuracy = outcome.probes.last().map(|p| p.test_accuracy);
    let results = json!({
        "config_hash": config_hash(&cfg),
        "seed": cfg.seed,
        "model": outcome.model.describe(),
        "widths": outcome.model.arch.widths(),
        "inherited_defaults": outcome.model.arch.inherited_defaults,
        "unsupervised": outcome.unsupervised,
        "r1": outcome.r1,
        "probes": outcome.probes,
        "test_accuracy": test_accuracy,
    });
    write_json(&a.out.join("results.json"), &results)?;
    println!("{}", outcome.model.describe());
    for p in &outcome.probes {
        println!("depth {}: test accuracy {:.4}", p.depth, p.test_accuracy);
    }
    Ok(())
}

fn load_checkpoint_split(ck: &Checkpoint, split: Split, data_dir: Option<&Path>) -> Result<Dataset> {
    let kind = ck.dataset.ok_or_else(|| config_err!("checkpoint does not name its dataset"))?;
    let mut cfg = RunConfig::new(
        kind,
        ArchitectureConfig::Convolutional {
            first_width: 1,
            width_factor: 1,
            max_layers: None,
            stop_resolution: 1,
            layers: Vec::new(),
        },
    );
    if let Some(d) = data_dir {
        cfg.data_dir = Some(d.join(kind.subdir())).filter(|p| p.is_dir()).or(Some(d.to_path_buf()));
    }
    let dir = dataset_dir(&cfg, None)?;
    let data = kind.load(&dir, split)?;
    let stats = ck.normalization.as_ref().ok_or_else(|| config_err!("checkpoint has no normalization statistics"))?;
    let shape = data.item_shape();
    let arch = &ck.model.arch;
    if shape.c != arch.input_channels || shape.h != arch.input_size {
        return Err(config_err!("dataset items {shape} do not fit a model for {}x{0}px", arch.input_size));
    }
    Ok(data.normalize(Some(stats))?)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let probe = ck.head.as_ref().ok_or_else(|| config_err!("checkpoint has no classifier head"))?;
    let data = load_checkpoint_split(&ck, a.split, a.data_dir.as_deref())?;
    let report = with_threads(a.threads, || -> Result<_> {
        let feats = HalfFeatures::extract(&ck.model, &data, probe.depth, 100)?;
        Ok(evaluate(&probe.head, &feats)?)
    })??;
    println!("{:.4}", report.accuracy);
    if let Some(out) = &a.out {
        create_dir(out)?;
        let results = json!({
            "checkpoint": a.checkpoint,
            "split": a.split,
            "depth": probe.depth,
            "accuracy": report.accuracy,
            "per_class": report.per_class,
            "count": report.count,
        });
        write_json(&out.join("results.json"), &results)?;
    }
    Ok(())
}

fn parse_neurons(spec: &str, count: usize) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((0..count).collect());
    }
    let list = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| config_err!("bad neuron index {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = list.iter().find(|&&n| n >= count) {
        return Err(config_err!("neuron {bad} out of range for {count} neurons"));
    }
    Ok(list)
}

fn layer_index(model: &Model, layer: usize) -> Result<usize> {
    if layer == 0 || layer > model.depth() {
        return Err(config_err!("layer {layer} outside 1..={}", model.depth()));
    }
    Ok(layer - 1)
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = &ck.model;
    match a.task {
        AnalyzeTask::R1 => {
            let report = count_r1(model, a.tolerance)?;
            create_dir(&a.out)?;
            let path = a.out.join("r1.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
            w.write_record(["layer", "neuron", "radius", "r1"]).map_err(|e| Error::io(&path, e.into()))?;
            for l in &report.layers {
                for (n, r) in l.radii.iter().enumerate() {
                    let rec = [
                        l.layer.to_string(),
                        n.to_string(),
                        r.to_string(),
                        ((r - 1.0).abs() <= a.tolerance).to_string(),
                    ];
                    w.write_record(&rec).map_err(|e| Error::io(&path, e.into()))?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            println!("R1 fraction {:.4} (tolerance {})", report.overall(), a.tolerance);
        }
        AnalyzeTask::Rf => {
            let layer = layer_index(model, a.layer)?;
            let neurons = parse_neurons(&a.neurons, model.layers[layer].bank.neurons())?;
            let cfg = PgdConfig { seed: a.seed, ..PgdConfig::default() };
            let fields = neurons
                .iter()
                .map(|&n| receptive_field_pgd(model, layer, n, &cfg))
                .collect::<hebbnet_core::Result<Vec<_>>>()?;
            create_dir(&a.out)?;
            let s = model.arch.input_shape(1);
            let images: Vec<&[f32]> = fields.iter().map(|f| f.image.data()).collect();
            let (rows, cols) = grid_shape(images.len());
            let grid = tile_images(&images, (s.c, s.h, s.w), rows, cols)?;
            ppm::write(&a.out.join(format!("rf_layer{}.ppm", a.layer)), &grid)?;
            let path = a.out.join(format!("rf_layer{}.csv", a.layer));
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
            w.write_record(["neuron", "activation", "iterations", "converged"])
                .map_err(|e| Error::io(&path, e.into()))?;
            for f in &fields {
                let rec =
                    [f.neuron.to_string(), f.activation.to_string(), f.iterations.to_string(), f.converged.to_string()];
                w.write_record(&rec).map_err(|e| Error::io(&path, e.into()))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            println!("{} receptive fields of layer {} in a {rows}x{cols} grid", fields.len(), a.layer);
        }
        AnalyzeTask::Patches => {
            let layer = layer_index(model, a.layer)?;
            let neurons = parse_neurons(&a.neurons, model.layers[layer].bank.neurons())?;
            let data = load_checkpoint_split(&ck, a.split, a.data_dir.as_deref())?;
            create_dir(&a.out)?;
            let path = a.out.join(format!("patches_layer{}.csv", a.layer));
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
            w.write_record(["neuron", "rank", "image", "y0", "x0", "y1", "x1", "activation"])
                .map_err(|e| Error::io(&path, e.into()))?;
            for &n in &neurons {
                for (rank, h) in analysis::top_activating_patches(model, &data, layer, n, a.k)?.iter().enumerate() {
                    let b = h.bbox;
                    let rec = [n, rank, h.image]
                        .map(|v| v.to_string())
                        .into_iter()
                        .chain([b.y0, b.x0, b.y1, b.x1].map(|v| v.to_string()));
                    let rec: Vec<String> = rec.chain([h.activation.to_string()]).collect();
                    w.write_record(&rec).map_err(|e| Error::io(&path, e.into()))?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            println!("top {} patches for {} neurons of layer {}", a.k, neurons.len(), a.layer);
        }
        AnalyzeTask::ExportFeatures => {
            layer_index(model, a.layer)?;
            let data = load_checkpoint_split(&ck, a.split, a.data_dir.as_deref())?;
            let feats = HalfFeatures::extract(model, &data, a.layer, 100)?;
            create_dir(&a.out)?;
            feats.write_csv(&a.out.join(format!("features_layer{}.csv", a.layer)))?;
            println!("exported {} feature vectors of width {}", data.len(), model.feature_dim(a.layer)?);
        }
    }
    Ok(())
}

/// One row of the bench table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub variant: &'static str,
    pub seed: u64,
    pub test_accuracy: f32,
    pub r1_fraction: f32,
}

/// The three single-layer variants at matched settings.
pub fn bench_variants(base: &RunConfig) -> [(&'static str, RunConfig); 3] {
    let variant = |mode, untrained| {
        let mut c = base.clone();
        c.plasticity_mode = Some(mode);
        c.untrained = untrained;
        c
    };
    [
        ("softhebb", variant(PlasticityMode::SoftAntiHebbian, false)),
        ("random", variant(PlasticityMode::SoftAntiHebbian, true)),
        ("hard_wta", variant(PlasticityMode::HardWta, false)),
    ]
}

fn mean_std(v: &[f32]) -> (f32, f32) {
    let n = v.len() as f32;
    let m = v.iter().sum::<f32>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f32>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut args = a.run.clone();
    if args.preset.is_none() && args.config.is_none() && args.layers.is_none() {
        args.layers = Some(1);
    }
    let base = resolve_config(&args)?;
    if a.seeds == 0 {
        return Err(config_err!("at least one seed is required"));
    }
    let splits = load_splits(&base, None)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("manifest.json"), &run_manifest(&base))?;
    let mut rows = Vec::new();
    for (name, cfg) in bench_variants(&base) {
        for s in 0..a.seeds {
            let cfg = RunConfig { seed: base.seed + s, ..cfg.clone() };
            let out = with_threads(cfg.threads, || pipeline::run(&cfg, &splits, &mut |_| {}))??;
            let acc = out.probes.last().map_or(0.0, |p| p.test_accuracy);
            rows.push(BenchRow { variant: name, seed: cfg.seed, test_accuracy: acc, r1_fraction: out.r1.overall() });
        }
    }
    let path = a.out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::io(&path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("variant,mean_accuracy,std_accuracy,mean_r1_fraction");
    for (name, _) in bench_variants(&base) {
        let acc: Vec<f32> = rows.iter().filter(|r| r.variant == name).map(|r| r.test_accuracy).collect();
        let r1: Vec<f32> = rows.iter().filter(|r| r.variant == name).map(|r| r.r1_fraction).collect();
        let (m, s) = mean_std(&acc);
        println!("{name},{m:.4},{s:.4},{:.4}", mean_std(&r1).0);
    }
    Ok(())
}
