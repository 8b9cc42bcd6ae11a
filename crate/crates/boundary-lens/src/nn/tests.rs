use super::*;
use crate::data::LabeledDataset;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn random_tensor(shape: &[usize], rng: &mut ChaCha12Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Central-difference directional derivative of `u · f_{from,to}(x)` along
/// coordinate `i`, sweeping ε and keeping the best agreement.
fn finite_diff_matches(
    model: &ModelGraph,
    from: usize,
    to: usize,
    x: &Tensor,
    u: &Tensor,
    analytic: &Tensor,
) {
    for i in 0..x.len() {
        let mut best_rel = f64::INFINITY;
        for eps in [1e-2f32, 3e-3, 1e-3, 1e-4] {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fp = crate::linalg::dot64(
                model.forward_to_layer(from, to, &xp).unwrap().data(),
                u.data(),
            );
            let fm = crate::linalg::dot64(
                model.forward_to_layer(from, to, &xm).unwrap().data(),
                u.data(),
            );
            let fd = (fp - fm) / (2.0 * eps as f64);
            let a = analytic.data()[i] as f64;
            let denom = a.abs().max(fd.abs()).max(1e-6);
            best_rel = best_rel.min((fd - a).abs() / denom);
        }
        assert!(
            best_rel < 1e-3,
            "coordinate {}: best relative error {} >= 1e-3",
            i,
            best_rel
        );
    }
}

fn gradient_check(specs: Vec<LayerSpec>, input_shape: Vec<usize>, class_count: usize, seed: u64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut model = ModelGraph::new(input_shape.clone(), specs, 0, class_count).unwrap();
    model.init_weights(seed);
    let x = random_tensor(&input_shape, &mut rng);
    let to = model.layer_count();
    let u = random_tensor(model.shape_at(to), &mut rng);
    let tape = model.forward_span(0, to, &x).unwrap();
    let analytic = model.backward_span(&tape, &u, None, true).unwrap();
    finite_diff_matches(&model, 0, to, &x, &u, &analytic);
}

#[test]
fn dense_gradient_matches_finite_differences() {
    for seed in 0..5 {
        gradient_check(vec![LayerSpec::Dense { out_features: 3 }], vec![4], 3, seed);
    }
}

#[test]
fn relu_gradient_matches_finite_differences() {
    for seed in 0..5 {
        gradient_check(
            vec![LayerSpec::Dense { out_features: 4 }, LayerSpec::Relu],
            vec![4],
            4,
            100 + seed,
        );
    }
}

#[test]
fn conv_gradient_matches_finite_differences() {
    for seed in 0..5 {
        gradient_check(
            vec![
                LayerSpec::Conv2d {
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Flatten,
            ],
            vec![2, 5, 5],
            2 * 3 * 3,
            200 + seed,
        );
    }
}

#[test]
fn maxpool_gradient_matches_finite_differences() {
    for seed in 0..5 {
        gradient_check(
            vec![LayerSpec::MaxPool2d { kernel: 2 }, LayerSpec::Flatten],
            vec![1, 4, 4],
            4,
            300 + seed,
        );
    }
}

#[test]
fn full_stack_gradient_matches_finite_differences() {
    gradient_check(
        vec![
            LayerSpec::Conv2d {
                out_channels: 2,
                kernel: 3,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { kernel: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 5 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_features: 3 },
        ],
        vec![1, 7, 7],
        3,
        42,
    );
}

fn small_mlp(seed: u64) -> ModelGraph {
    let mut m = ModelGraph::new(
        vec![4],
        vec![
            LayerSpec::Dense { out_features: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_features: 3 },
        ],
        1,
        3,
    )
    .unwrap();
    m.init_weights(seed);
    m
}

#[test]
fn identity_span_returns_input_unchanged() {
    let model = small_mlp(1);
    let x = Tensor::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
    let y = model.forward_to_layer(0, 0, &x).unwrap();
    assert_eq!(x, y);
}

#[test]
fn dense_identity_then_relu_clamps_negatives() {
    let mut model = ModelGraph::new(
        vec![2],
        vec![LayerSpec::Dense { out_features: 2 }, LayerSpec::Relu],
        0,
        2,
    )
    .unwrap();
    let w = model.layers_mut()[0].weight.as_mut().unwrap();
    w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    let out = model
        .forward(&Tensor::from_vec(vec![-1.0, 2.0]))
        .unwrap();
    assert_eq!(out.data(), &[0.0, 2.0]);
}

#[test]
fn forward_composes_across_any_split() {
    let model = small_mlp(7);
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let x = random_tensor(&[4], &mut rng);
    let full = model.forward_to_layer(0, 3, &x).unwrap();
    for split in 0..=3 {
        let mid = model.forward_to_layer(0, split, &x).unwrap();
        let composed = model.forward_to_layer(split, 3, &mid).unwrap();
        assert_eq!(full, composed, "split at {}", split);
    }
}

#[test]
fn forward_rejects_wrong_shape_with_layer_index() {
    let model = small_mlp(3);
    let err = model
        .forward(&Tensor::from_vec(vec![1.0, 2.0]))
        .unwrap_err();
    match err {
        Error::LayerShapeMismatch { layer, .. } => assert_eq!(layer, 0),
        other => panic!("unexpected error {:?}", other),
    }
}

#[test]
fn directional_derivative_linear_head_is_exact() {
    let mut model = ModelGraph::new(vec![3], vec![LayerSpec::Dense { out_features: 2 }], 0, 2)
        .unwrap();
    let w = model.layers_mut()[0].weight.as_mut().unwrap();
    w.data_mut()
        .copy_from_slice(&[0.5, -1.0, 2.0, 0.0, 1.0, 0.0]);
    let a = Tensor::from_vec(vec![10.0, -3.0, 0.25]);
    let v = Tensor::from_vec(vec![1.0, 2.0, -1.0]);
    let d = directional_logit_derivative(&model, 0, &a, &v, 0).unwrap();
    // w_0 · v = 0.5*1 + (-1)*2 + 2*(-1)
    assert!((d - (0.5 - 2.0 - 2.0)).abs() < 1e-12);
}

#[test]
fn directional_derivative_zero_direction_is_zero() {
    let model = small_mlp(11);
    let a = Tensor::from_vec(vec![0.3, 0.4, -0.1, 0.9]);
    let v = Tensor::zeros(&[4]);
    let d = directional_logit_derivative(&model, 0, &a, &v, 1).unwrap();
    assert_eq!(d, 0.0);
}

#[test]
fn directional_derivative_matches_central_differences() {
    let model = small_mlp(13);
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    for _ in 0..10 {
        let a = random_tensor(&[4], &mut rng);
        let v = random_tensor(&[4], &mut rng);
        let class = rng.gen_range(0..3);
        let analytic = directional_logit_derivative(&model, 0, &a, &v, class).unwrap();
        let mut best_rel = f64::INFINITY;
        for eps in [1e-2f32, 1e-3, 1e-4] {
            let mut ap = a.clone();
            crate::linalg::axpy(eps, v.data(), ap.data_mut());
            let mut am = a.clone();
            crate::linalg::axpy(-eps, v.data(), am.data_mut());
            let fp = model.forward(&ap).unwrap().data()[class] as f64;
            let fm = model.forward(&am).unwrap().data()[class] as f64;
            let fd = (fp - fm) / (2.0 * eps as f64);
            let denom = analytic.abs().max(fd.abs()).max(1e-6);
            best_rel = best_rel.min((fd - analytic).abs() / denom);
        }
        assert!(best_rel < 1e-3, "relative error {}", best_rel);
    }
}

#[test]
fn relu_output_is_non_negative_and_pool_dominates_window() {
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let model = ModelGraph::new(
        vec![1, 4, 4],
        vec![
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { kernel: 2 },
            LayerSpec::Flatten,
        ],
        0,
        4,
    )
    .unwrap();
    for _ in 0..20 {
        let x = random_tensor(&[1, 4, 4], &mut rng);
        let relu_out = model.forward_to_layer(0, 1, &x).unwrap();
        assert!(relu_out.data().iter().all(|v| *v >= 0.0));
        let pooled = model.forward_to_layer(0, 2, &x).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let p = pooled.data()[oy * 2 + ox];
                for ky in 0..2 {
                    for kx in 0..2 {
                        let v = relu_out.data()[(oy * 2 + ky) * 4 + (ox * 2 + kx)];
                        assert!(p >= v);
                    }
                }
            }
        }
    }
}

fn toy_classification_data(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let label = rng.gen_range(0..3usize);
        let center = [-1.5f32, 0.0, 1.5][label];
        rows.push(vec![
            center + rng.gen_range(-0.3..0.3),
            -center + rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
        ]);
        labels.push(label);
    }
    LabeledDataset::new(Tensor::from_rows(&rows).unwrap(), labels).unwrap()
}

#[test]
fn single_batch_overfit_drives_loss_down() {
    let model = small_mlp(31);
    let data = toy_classification_data(16, 5);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 16,
        learning_rate: 0.01,
        optimizer: OptimizerKind::adam_default(),
        seed: 3,
    };
    let (_, metrics) = train_model(&model, &data, &data, &cfg, 1).unwrap();
    assert!(
        *metrics.epoch_train_loss.last().unwrap() < 0.01,
        "final loss {}",
        metrics.epoch_train_loss.last().unwrap()
    );
}

#[test]
fn training_is_bit_reproducible_for_equal_seeds() {
    let model = small_mlp(37);
    let train = toy_classification_data(64, 8);
    let test = toy_classification_data(32, 9);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        learning_rate: 0.005,
        optimizer: OptimizerKind::adam_default(),
        seed: 77,
    };
    let (m1, k1) = train_model(&model, &train, &test, &cfg, 1).unwrap();
    let (m2, k2) = train_model(&model, &train, &test, &cfg, 1).unwrap();
    for (l1, l2) in m1.layers().iter().zip(m2.layers()) {
        assert_eq!(
            l1.weight.as_ref().map(|w| w.data().to_vec()),
            l2.weight.as_ref().map(|w| w.data().to_vec())
        );
        assert_eq!(
            l1.bias.as_ref().map(|b| b.data().to_vec()),
            l2.bias.as_ref().map(|b| b.data().to_vec())
        );
    }
    assert_eq!(k1.epoch_train_loss, k2.epoch_train_loss);
    assert_eq!(k1.test_accuracy, k2.test_accuracy);
}

#[test]
fn rejects_out_of_range_labels() {
    let model = small_mlp(41);
    let mut data = toy_classification_data(8, 10);
    data.labels[3] = 7;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        learning_rate: 0.01,
        optimizer: OptimizerKind::Sgd,
        seed: 0,
    };
    assert!(train_model(&model, &data, &data, &cfg, 1).is_err());
}

#[test]
fn model_roundtrip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_mlp(43);
    let p1 = dir.path().join("a.cbvm");
    let p2 = dir.path().join("b.cbvm");
    model.save(&p1).unwrap();
    let loaded = ModelGraph::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn truncated_model_file_names_missing_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_mlp(47);
    let p = dir.path().join("m.cbvm");
    model.save(&p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
    let err = ModelGraph::load(&p).unwrap_err().to_string();
    assert!(err.contains("layer2"), "error should name the tensor: {}", err);
}

#[test]
fn empty_layer_list_is_rejected() {
    assert!(ModelGraph::new(vec![4], vec![], 0, 4).is_err());
}
