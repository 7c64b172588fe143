use hebbnet_core::analysis::count_r1;
use hebbnet_core::data::Dataset;
use hebbnet_core::network::{build_architecture, ArchitectureRequest};
use hebbnet_core::training::{
    evaluate, train_classifier, train_unsupervised, FeatureMatrix, SupervisedRunConfig, UnsupervisedRunConfig,
};
use hebbnet_core::{rng, Model, Shape, Tensor};
use rand::Rng;

/// Three colour-blob classes on 16x16 RGB with noise.
fn blobs(n: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, 99, 0);
    let s = 16;
    let mut data = Vec::with_capacity(n * 3 * s * s);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 3;
        let (cy, cx) = (r.random_range(4..12) as f32, r.random_range(4..12) as f32);
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                    let v = if c == class { (-d2 / 8.0).exp() } else { 0.0 };
                    data.push(v + 0.05 * r.random::<f32>());
                }
            }
        }
        labels.push(class as u16);
    }
    Dataset::new(Tensor::new(Shape::new(n, 3, s, s), data).unwrap(), Some(labels), 3).unwrap()
}

fn small_model(seed: u64) -> Model {
    let mut req = ArchitectureRequest::new(16, 3, 8, 2);
    req.max_layers = Some(2);
    Model::init(build_architecture(&req).unwrap(), seed).unwrap()
}

fn train(seed: u64, data: &Dataset) -> Model {
    let mut model = small_model(seed);
    let cfg = UnsupervisedRunConfig { seed, ..UnsupervisedRunConfig::default() };
    train_unsupervised(&mut model, data, &cfg, &mut |_| {}).unwrap();
    model
}

#[test]
fn greedy_training_then_probe_separates_blobs() {
    let train_set = blobs(300, 1).normalize(None).unwrap();
    let stats = train_set.normalization().cloned().unwrap();
    let test_set = blobs(150, 2).normalize(Some(&stats)).unwrap();
    let model = train(3, &train_set);
    assert!(model.layers.iter().all(|l| l.bank.weights().iter().all(|w| w.is_finite())));
    let r1 = count_r1(&model, 0.05).unwrap();
    assert_eq!(r1.layers.len(), 2);

    let f_train = FeatureMatrix::extract(&model, &train_set, 2, 32).unwrap();
    let f_test = FeatureMatrix::extract(&model, &test_set, 2, 32).unwrap();
    let cfg = SupervisedRunConfig { epochs: 20, ..SupervisedRunConfig::default() };
    let (head, history) = train_classifier(&f_train, None, &cfg, &mut |_| {}).unwrap();
    assert_eq!(history.len(), 20);
    let acc = evaluate(&head, &f_test).unwrap().accuracy;
    assert!(acc > 0.9, "accuracy {acc}");
}

#[test]
fn same_seed_gives_identical_weights() {
    let data = blobs(120, 5).normalize(None).unwrap();
    let a = train(7, &data);
    let b = train(7, &data);
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        let bits = |w: &[f32]| w.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(la.bank.weights()), bits(lb.bank.weights()));
        assert_eq!(la.bn, lb.bn);
    }
    let c = train(8, &data);
    assert_ne!(a.layers[0].bank.weights(), c.layers[0].bank.weights());
}
