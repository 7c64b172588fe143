//! Acceptance criteria. One `PASS`/`FAIL`/`SKIP` line per criterion.
//!
//! Dataset criteria read `$HEBBNET_DATA_DIR/{mnist,cifar-10-batches-bin}` and
//! are skipped when the files are absent. `HEBBNET_ACCEPTANCE_ONLY=2,7` runs a
//! subset. Failures are reported; `HEBBNET_ACCEPTANCE_STRICT=1` also makes
//! them fail the process.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::time::Instant;

use hebbnet::checkpoint::{Checkpoint, ProbeHead};
use hebbnet::cli::bench_variants;
use hebbnet::config::{ArchitectureConfig, RunConfig};
use hebbnet::datasets::{data_root, DatasetKind};
use hebbnet::pipeline::{self, load_splits, Splits};
use hebbnet_core::analysis::{cosine, count_r1, embed_kernel, receptive_field_pgd, PgdConfig};
use hebbnet_core::data::Dataset;
use hebbnet_core::plasticity::{
    adaptive_lr, init_weights, soft_competition, softhebb_delta, InitFamily, InitSpec, KernelGeometry,
    LearningRateRule, NeuronBank, PlasticityMode,
};
use hebbnet_core::tensor::{conv_forward, Padding};
use hebbnet_core::training::{classifier_backward, lr_schedule, ClassifierHead, DEFAULT_MILESTONES};
use hebbnet_core::{rng, Model, Shape, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const R1_TOLERANCE: f32 = 0.05;

#[derive(Clone)]
enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Suite {
    only: Option<Vec<u32>>,
    passed: usize,
    failed: usize,
    skipped: usize,
}

impl Suite {
    fn wants(&self, id: u32) -> bool {
        self.only.as_ref().is_none_or(|o| o.contains(&id))
    }

    fn report(&mut self, id: u32, name: &str, started: Instant, outcome: Outcome) {
        let secs = started.elapsed().as_secs_f32();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => {
                self.passed += 1;
                ("PASS", d)
            }
            Outcome::Fail(d) => {
                self.failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => {
                self.skipped += 1;
                ("SKIP", d)
            }
        };
        println!("{tag} criterion {id} ({name}): {detail} [{secs:.0}s]");
    }
}

fn verdict(pass: bool, detail: String) -> Outcome {
    if pass {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn dataset_dir(kind: DatasetKind) -> Option<PathBuf> {
    let dir = data_root(None)?.join(kind.subdir());
    let probe = match kind {
        DatasetKind::Mnist => "t10k-labels-idx1-ubyte",
        DatasetKind::Cifar10 => "test_batch.bin",
    };
    let present = dir.join(probe).is_file() || dir.join(format!("{probe}.gz")).is_file();
    present.then_some(dir)
}

fn load(cfg: &mut RunConfig, dir: &Path) -> Splits {
    cfg.data_dir = Some(dir.to_path_buf());
    load_splits(cfg, None).expect("dataset loads")
}

fn set_layer1<F: FnMut(&mut hebbnet_core::network::LayerHyper)>(cfg: &mut RunConfig, mut f: F) {
    match &mut cfg.architecture {
        ArchitectureConfig::Convolutional { layers, .. } => f(&mut layers[0]),
        ArchitectureConfig::FullyConnected { .. } => panic!("convolutional config expected"),
    }
}

fn single_conv_layer() -> RunConfig {
    let mut cfg = RunConfig::preset("table-a2-cifar").unwrap();
    if let ArchitectureConfig::Convolutional { max_layers, first_width, .. } = &mut cfg.architecture {
        *max_layers = Some(1);
        *first_width = 96;
    }
    set_layer1(&mut cfg, |l| l.plasticity.inverse_temperature = 1.0);
    cfg.plasticity_mode = Some(PlasticityMode::SoftAntiHebbian);
    cfg
}

fn criterion_1(dir: &Path) -> Outcome {
    let mut cfg = RunConfig::preset("fc-mnist-2000").unwrap();
    let splits = load(&mut cfg, dir);
    let out = pipeline::run(&cfg, &splits, &mut |_| {}).expect("run completes");
    let acc = out.probes[0].test_accuracy;
    verdict(acc >= 0.96, format!("test accuracy {:.4} (target >= 0.9600), R1 fraction {:.3}", acc, out.r1.overall()))
}

/// Trained single-layer SoftHebb model shared by criteria 2, 4 and 7.
struct Crit2 {
    model: Model,
    outcome: Outcome,
}

fn criterion_2(dir: &Path) -> Crit2 {
    let mut base = single_conv_layer();
    let splits = load(&mut base, dir);
    let mut accs = Vec::new();
    let mut model = None;
    for (name, cfg) in bench_variants(&base) {
        let out = pipeline::run(&cfg, &splits, &mut |_| {}).expect("run completes");
        println!(
            "  criterion 2 {name}: test accuracy {:.4}, R1 fraction {:.3}",
            out.probes[0].test_accuracy,
            out.r1.overall()
        );
        accs.push(out.probes[0].test_accuracy);
        if name == "softhebb" {
            model = Some(out.model);
        }
    }
    let (soft, random, hard) = (accs[0], accs[1], accs[2]);
    let pass = soft >= 0.69 && soft > random && random > hard;
    let detail = format!("SoftHebb {soft:.4} (target >= 0.6900) > random {random:.4} > hard-WTA {hard:.4}");
    Crit2 { model: model.unwrap(), outcome: verdict(pass, detail) }
}

fn criterion_3(dir: &Path) -> Outcome {
    let mut cfg = RunConfig::preset("table-a2-cifar").unwrap();
    if let ArchitectureConfig::Convolutional { first_width, width_factor, .. } = &mut cfg.architecture {
        *first_width = 16;
        *width_factor = 4;
    }
    cfg.probe_layers = vec![1, 2, 3];
    let splits = load(&mut cfg, dir);
    let trained = pipeline::run(&cfg, &splits, &mut |_| {}).expect("trained run completes");
    let untrained = pipeline::run(&RunConfig { untrained: true, ..cfg.clone() }, &splits, &mut |_| {})
        .expect("untrained run completes");
    let t: Vec<f32> = trained.probes.iter().map(|p| p.test_accuracy).collect();
    let u: Vec<f32> = untrained.probes.iter().map(|p| p.test_accuracy).collect();
    let increasing = t.len() == 3 && t.windows(2).all(|w| w[1] > w[0]);
    let beats = t.iter().zip(&u).all(|(a, b)| a > b);
    let fmt = |v: &[f32]| v.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(", ");
    verdict(increasing && beats, format!("by depth, trained {}; untrained {}", fmt(&t), fmt(&u)))
}

fn criterion_4(dir: &Path, soft: &Model) -> Outcome {
    let base = count_r1(soft, R1_TOLERANCE).unwrap().overall();
    let mut cfg = single_conv_layer();
    set_layer1(&mut cfg, |l| l.plasticity.inverse_temperature = 10.0);
    let splits = load(&mut cfg, dir);
    let (model, _) = pipeline::train_model(&cfg, &splits.train, &mut |_| {}).expect("training completes");
    let sharp = count_r1(&model, R1_TOLERANCE).unwrap().overall();
    let pass = base > 0.05 && base < 0.95 && sharp > 0.95;
    verdict(
        pass,
        format!("R1 fraction {base:.3} at 1/tau=1 (target in (0.05, 0.95)), {sharp:.3} at 1/tau=10 (target > 0.95)"),
    )
}

fn criterion_5(dir: &Path) -> Outcome {
    const ITERATIONS: usize = 2000;
    let mut cfg = single_conv_layer();
    cfg.unsupervised.max_iterations = Some(ITERATIONS);
    let splits = load(&mut cfg, dir);
    let epoch_steps = splits.train.len().div_ceil(cfg.unsupervised.batch_size);
    let mut rows = Vec::new();
    let mut all = true;
    for seed in 0..3 {
        let mut r1 = [0.0f32; 2];
        for (slot, rule) in [LearningRateRule::NormAdaptive, LearningRateRule::LinearDecay { total_steps: epoch_steps }]
            .into_iter()
            .enumerate()
        {
            let mut c = RunConfig { seed, ..cfg.clone() };
            set_layer1(&mut c, |l| l.plasticity.lr_rule = rule);
            let (model, report) = pipeline::train_model(&c, &splits.train, &mut |_| {}).expect("training completes");
            assert_eq!(report.unwrap().steps, vec![ITERATIONS]);
            r1[slot] = count_r1(&model, R1_TOLERANCE).unwrap().overall();
        }
        all &= r1[0] >= r1[1];
        rows.push(format!("seed {seed}: adaptive {:.3} vs linear {:.3}", r1[0], r1[1]));
    }
    verdict(all, rows.join("; "))
}

// ---- criterion 6: oracles, no datasets ----

fn conv_oracle() -> Result<String, String> {
    let mut g = rng::stream(11, 0, 0);
    let (n, c, h, w, k, kern, pad) = (2, 3, 9, 7, 4, 3, 1);
    let x: Vec<f32> = (0..n * c * h * w).map(|_| g.random_range(-1.0..1.0)).collect();
    let wts: Vec<f32> = (0..k * c * kern * kern).map(|_| g.random_range(-1.0..1.0)).collect();
    let bank = NeuronBank::from_weights(KernelGeometry::new(c, kern), wts.clone()).unwrap();
    let input = Tensor::new(Shape::new(n, c, h, w), x.clone()).unwrap();
    let fast = conv_forward(&input, &bank, Padding::Explicit(pad)).unwrap();
    let (oh, ow) = (h + 2 * pad + 1 - kern, w + 2 * pad + 1 - kern);
    let mut worst = 0.0f64;
    for b in 0..n {
        for o in 0..k {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0f64;
                    for ch in 0..c {
                        for i in 0..kern {
                            for j in 0..kern {
                                let (yy, xx) =
                                    (y as isize + i as isize - pad as isize, xo as isize + j as isize - pad as isize);
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ch) * h + yy as usize) * w + xx as usize] as f64;
                                acc += xv * wts[((o * c + ch) * kern + i) * kern + j] as f64;
                            }
                        }
                    }
                    worst = worst.max((acc - fast.get(b, o, y, xo) as f64).abs());
                }
            }
        }
    }
    if fast.shape() != Shape::new(n, k, oh, ow) {
        return Err(format!("conv shape {}", fast.shape()));
    }
    (worst <= 1e-5).then(|| format!("conv max error {worst:.1e}")).ok_or(format!("conv max error {worst:.1e} > 1e-5"))
}

fn softmax_oracle() -> Result<String, String> {
    let mut g = rng::stream(12, 0, 0);
    let mut worst_sum = 0.0f32;
    let mut worst_shift = 0.0f32;
    for _ in 0..200 {
        // a 1/64 grid keeps the shifted inputs exact
        let u: Vec<f32> = (0..16).map(|_| g.random_range(-320..320) as f32 / 64.0).collect();
        let t = g.random_range(0.25..10.0);
        let y = soft_competition(&u, t);
        if y.iter().any(|&v| !(v > 0.0)) {
            return Err("non-positive softmax output".into());
        }
        worst_sum = worst_sum.max((y.iter().sum::<f32>() - 1.0).abs());
        let shifted: Vec<f32> = u.iter().map(|v| v + 37.5).collect();
        let ys = soft_competition(&shifted, t);
        worst_shift = worst_shift.max(y.iter().zip(&ys).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max));
    }
    let big = soft_competition(&[1000.0, 999.0, -1000.0], 1.0);
    if !big.iter().all(|v| v.is_finite()) {
        return Err("softmax overflow".into());
    }
    if worst_sum <= 1e-6 && worst_shift <= 1e-6 {
        Ok(format!("softmax sum error {worst_sum:.1e}, shift error {worst_shift:.1e}"))
    } else {
        Err(format!("softmax sum error {worst_sum:.1e}, shift error {worst_shift:.1e} (limit 1e-6)"))
    }
}

fn fixed_point_oracle() -> Result<String, String> {
    let mut g = rng::stream(13, 0, 0);
    // entries +-s with 4^m entries give a norm and unit vector that are exact in binary
    for (len, scale) in [(4usize, 1.0f32), (16, 0.5), (64, 3.0), (256, 0.125)] {
        let x: Vec<f32> = (0..len).map(|_| if g.random::<bool>() { scale } else { -scale }).collect();
        let norm = scale * (len as f32).sqrt();
        let w: Vec<f32> = x.iter().map(|v| v / norm).collect();
        let u: f32 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        let y = g.random_range(0.0..1.0);
        let d = softhebb_delta(&x, u, y, &w, 0.3);
        if d.iter().any(|&v| v != 0.0) {
            return Err(format!("nonzero update at the fixed point for D={len}"));
        }
    }
    Ok("fixed point exact".into())
}

fn adaptive_lr_oracle() -> Result<String, String> {
    let v = adaptive_lr(1.0, 0.08, 0.5);
    (v == 0.0).then(|| "adaptive_lr(1)=0".to_string()).ok_or(format!("adaptive_lr(1) = {v}"))
}

fn init_oracle() -> Result<String, String> {
    let mut g = rng::stream(14, 0, 0);
    let mut notes = Vec::new();
    for family in [InitFamily::Normal, InitFamily::PositiveUniform, InitFamily::NegativeUniform] {
        for (channels, kernel, radius) in [(4, 5, 3.0f32), (16, 5, 25.0)] {
            let geometry = KernelGeometry::new(channels, kernel);
            let d = geometry.synapses();
            let spec = InitSpec { family, target_radius: radius };
            let bank = init_weights(1000, geometry, &spec, &mut g).unwrap();
            let w = bank.weights();
            // first absolute moment form of the radius: sqrt(D) * E|w|
            let moment = (d as f64).sqrt() * w.iter().map(|v| v.abs() as f64).sum::<f64>() / w.len() as f64;
            let target = match family {
                InitFamily::Normal => radius as f64,
                // sqrt(D) * range / 2 with range = R sqrt(2/D)
                _ => radius as f64 / 2f64.sqrt(),
            };
            let err = (moment / target - 1.0).abs();
            if err > 0.02 {
                return Err(format!("{family:?} D={d} R={radius}: moment {moment:.4} vs {target:.4}"));
            }
            let sign_ok = match family {
                InitFamily::Normal => true,
                InitFamily::PositiveUniform => w.iter().all(|&v| v >= 0.0),
                InitFamily::NegativeUniform => w.iter().all(|&v| v <= 0.0),
            };
            if !sign_ok {
                return Err(format!("{family:?} has weights of the wrong sign"));
            }
            notes.push(err);
        }
    }
    let worst = notes.iter().cloned().fold(0.0, f64::max);
    Ok(format!("init radius moment within {:.2}%", 100.0 * worst))
}

fn log_softmax_loss(w: &[f64], b: &[f64], x: &[f32], labels: &[u16], k: usize) -> f64 {
    let dim = w.len() / k;
    let mut total = 0.0;
    for (row, &y) in x.chunks(dim).zip(labels) {
        let z: Vec<f64> =
            (0..k).map(|c| b[c] + (0..dim).map(|j| w[c * dim + j] * row[j] as f64).sum::<f64>()).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y as usize];
    }
    total / labels.len() as f64
}

fn classifier_gradient_oracle() -> Result<String, String> {
    let (k, dim, batch) = (5, 12, 9);
    let mut head = ClassifierHead::init(k, dim, 0.5, 15).unwrap();
    let mut g = rng::stream(15, 0, 0);
    head.bias.iter_mut().for_each(|v| *v = g.random_range(-0.5..0.5));
    let x: Vec<f32> = (0..batch * dim).map(|_| StandardNormal.sample(&mut g)).collect();
    let labels: Vec<u16> = (0..batch).map(|_| g.random_range(0..k as u16)).collect();
    let grads = classifier_backward(&x, &labels, &head).unwrap();
    let mut w: Vec<f64> = head.weights.iter().map(|&v| v as f64).collect();
    let mut b: Vec<f64> = head.bias.iter().map(|&v| v as f64).collect();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut check = |analytic: f32, fd: f64| {
        let scale = (analytic as f64).abs().max(fd.abs());
        if scale > 1e-6 {
            worst = worst.max((analytic as f64 - fd).abs() / scale);
        }
    };
    for i in 0..w.len() {
        let v = w[i];
        w[i] = v + h;
        let up = log_softmax_loss(&w, &b, &x, &labels, k);
        w[i] = v - h;
        let down = log_softmax_loss(&w, &b, &x, &labels, k);
        w[i] = v;
        check(grads.weights[i], (up - down) / (2.0 * h));
    }
    for i in 0..b.len() {
        let v = b[i];
        b[i] = v + h;
        let up = log_softmax_loss(&w, &b, &x, &labels, k);
        b[i] = v - h;
        let down = log_softmax_loss(&w, &b, &x, &labels, k);
        b[i] = v;
        check(grads.bias[i], (up - down) / (2.0 * h));
    }
    (worst <= 1e-4)
        .then(|| format!("gradient relative error {worst:.1e}"))
        .ok_or(format!("gradient relative error {worst:.1e} > 1e-4"))
}

fn lr_schedule_oracle() -> Result<String, String> {
    let got = [0.10, 0.25, 0.95].map(|p| lr_schedule(p, 1.0, &DEFAULT_MILESTONES));
    (got == [1.0, 0.5, 1.0 / 128.0])
        .then(|| "lr schedule {1, 1/2, 1/128}".to_string())
        .ok_or(format!("lr schedule {got:?}"))
}

fn synthetic_splits() -> Splits {
    let mut g = rng::stream(16, 0, 0);
    let make = |n: usize, g: &mut rng::Rng| {
        let labels: Vec<u16> = (0..n).map(|i| (i % 4) as u16).collect();
        let data = labels
            .iter()
            .flat_map(|&l| {
                (0..3 * 32 * 32).map(move |o| (o / 1024 == l as usize % 3) as u8 as f32 * 0.6 + (l as f32) * 0.05)
            })
            .map(|v| v + g.random_range(0.0..0.3))
            .collect();
        Dataset::new(Tensor::new(Shape::new(n, 3, 32, 32), data).unwrap(), Some(labels), 4).unwrap()
    };
    let train = make(120, &mut g).normalize(None).unwrap();
    let stats = train.normalization().cloned().unwrap();
    let test = make(40, &mut g).normalize(Some(&stats)).unwrap();
    Splits { train, validation: None, test }
}

fn synthetic_config() -> RunConfig {
    let mut cfg = RunConfig::preset("table-a2-cifar").unwrap();
    if let ArchitectureConfig::Convolutional { first_width, max_layers, .. } = &mut cfg.architecture {
        *first_width = 6;
        *max_layers = Some(2);
    }
    cfg.supervised.epochs = 3;
    cfg.deterministic = true;
    cfg.threads = Some(1);
    cfg.seed = 21;
    cfg
}

fn saved_bytes(ck: &Checkpoint, dir: &Path) -> Vec<(String, Vec<u8>)> {
    ck.save(dir).unwrap();
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn checkpoint_and_determinism_oracle() -> Result<String, String> {
    let splits = synthetic_splits();
    let cfg = synthetic_config();
    let tmp = tempfile::TempDir::new().unwrap();
    let mut saved = Vec::new();
    for run in 0..2 {
        let out = pipeline::with_threads(cfg.threads, || pipeline::run(&cfg, &splits, &mut |_| {})).unwrap().unwrap();
        let mut ck = Checkpoint::new(out.model);
        ck.dataset = Some(DatasetKind::Cifar10);
        ck.normalization = splits.train.normalization().cloned();
        ck.head = out.head.clone();
        let dir = tmp.path().join(format!("run{run}"));
        saved.push(saved_bytes(&ck, &dir));
        let back = Checkpoint::load(&dir).map_err(|e| e.to_string())?;
        let bits =
            |m: &Model| m.layers.iter().flat_map(|l| l.bank.weights().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        let head_bits =
            |h: &Option<ProbeHead>| h.as_ref().map(|p| p.head.weights.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        if bits(&back.model) != bits(&ck.model) || head_bits(&back.head) != head_bits(&ck.head) || back != ck {
            return Err("checkpoint round trip is not bit-exact".into());
        }
    }
    if saved[0] != saved[1] {
        return Err("deterministic runs differ".into());
    }
    Ok(format!("checkpoint round trip and deterministic reruns bit-exact ({} files)", saved[0].len()))
}

fn criterion_6() -> Outcome {
    type Oracle = fn() -> Result<String, String>;
    let checks: [(&str, Oracle); 8] = [
        ("conv", conv_oracle),
        ("softmax", softmax_oracle),
        ("fixed point", fixed_point_oracle),
        ("adaptive lr", adaptive_lr_oracle),
        ("init", init_oracle),
        ("classifier gradient", classifier_gradient_oracle),
        ("lr schedule", lr_schedule_oracle),
        ("checkpoint/determinism", checkpoint_and_determinism_oracle),
    ];
    let started = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for (name, f) in checks {
        match f() {
            Ok(d) => details.push(d),
            Err(e) => {
                ok = false;
                details.push(format!("{name} FAILED: {e}"));
            }
        }
    }
    let secs = started.elapsed().as_secs_f32();
    ok &= secs < 120.0;
    details.push(format!("{secs:.1}s (limit 120s)"));
    verdict(ok, details.join("; "))
}

fn criterion_7(model: &Model) -> Outcome {
    let neurons = model.layers[0].bank.neurons();
    let mut worst_kernel = f32::INFINITY;
    let mut worst_seed = f32::INFINITY;
    for n in 0..neurons {
        let a = receptive_field_pgd(model, 0, n, &PgdConfig::default()).unwrap();
        let b = receptive_field_pgd(model, 0, n, &PgdConfig { seed: 1, ..PgdConfig::default() }).unwrap();
        let kernel = embed_kernel(model, n).unwrap();
        worst_kernel = worst_kernel.min(cosine(a.image.data(), kernel.data()));
        worst_seed = worst_seed.min(cosine(a.image.data(), b.image.data()));
    }
    verdict(
        worst_kernel > 0.99 && worst_seed > 0.95,
        format!("min cosine to kernel {worst_kernel:.4} (target > 0.99), across seeds {worst_seed:.4} (target > 0.95) over {neurons} neurons"),
    )
}

fn main() {
    // cargo passes harness flags such as --nocapture; listing mode gets no tests
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let only = std::env::var("HEBBNET_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect::<Vec<u32>>());
    let mut suite = Suite { only, passed: 0, failed: 0, skipped: 0 };
    let mnist = dataset_dir(DatasetKind::Mnist);
    let cifar = dataset_dir(DatasetKind::Cifar10);
    let missing = |kind: &str| Outcome::Skip(format!("{kind} not found under ${}", hebbnet::datasets::DATA_DIR_ENV));

    if suite.wants(6) {
        let t = Instant::now();
        let o = criterion_6();
        suite.report(6, "oracles and properties", t, o);
    }
    if suite.wants(1) {
        let t = Instant::now();
        let o = mnist.as_deref().map_or_else(|| missing("MNIST"), criterion_1);
        suite.report(1, "MNIST fully connected", t, o);
    }
    let needs_crit2 = [2, 4, 7].iter().any(|&i| suite.wants(i));
    let crit2 = match (&cifar, needs_crit2) {
        (Some(dir), true) => {
            let t = Instant::now();
            let c = criterion_2(dir);
            (t, Some(c))
        }
        _ => (Instant::now(), None),
    };
    if suite.wants(2) {
        let (t, c) = (crit2.0, &crit2.1);
        let o = match c {
            Some(c) => c.outcome.clone(),
            None => missing("CIFAR-10"),
        };
        suite.report(2, "CIFAR-10 single layer", t, o);
    }
    if suite.wants(3) {
        let t = Instant::now();
        let o = cifar.as_deref().map_or_else(|| missing("CIFAR-10"), criterion_3);
        suite.report(3, "depth monotonicity", t, o);
    }
    if suite.wants(4) {
        let t = Instant::now();
        let o = match (&cifar, &crit2.1) {
            (Some(dir), Some(c)) => criterion_4(dir, &c.model),
            _ => missing("CIFAR-10"),
        };
        suite.report(4, "R1 regimes", t, o);
    }
    if suite.wants(5) {
        let t = Instant::now();
        let o = cifar.as_deref().map_or_else(|| missing("CIFAR-10"), criterion_5);
        suite.report(5, "adaptive learning rate", t, o);
    }
    if suite.wants(7) {
        let t = Instant::now();
        let o = crit2.1.as_ref().map_or_else(|| missing("CIFAR-10"), |c| criterion_7(&c.model));
        suite.report(7, "receptive fields", t, o);
    }
    println!("acceptance: {} passed, {} failed, {} skipped", suite.passed, suite.failed, suite.skipped);
    let strict = std::env::var("HEBBNET_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && suite.failed > 0 {
        std::process::exit(1);
    }
}
