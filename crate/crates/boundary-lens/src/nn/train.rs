//! Mini-batch training with SGD or Adam.
//!
//! The determinism contract: with `jobs == 1` the whole run is a pure
//! function of (seed, data, config) — identical seeds give bit-identical
//! weights. With `jobs > 1` per-sample gradients are computed in
//! parallel chunks and merged in chunk order, which changes float
//! summation order relative to the sequential path; parallel runs are
//! reproducible for a fixed `jobs` value but not bit-equal to `jobs == 1`.

use super::{argmax, GradStore, ModelGraph};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    /// Adam with the framework-default moments.
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArg("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArg("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArg("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub epoch_train_loss: Vec<f64>,
    pub test_accuracy: f64,
    pub train_samples: usize,
    pub test_samples: usize,
}

struct AdamState {
    m: Vec<Option<(Tensor, Tensor)>>,
    v: Vec<Option<(Tensor, Tensor)>>,
    t: u64,
}

/// Train a copy of `model`; returns the trained model and metrics.
pub fn train_model(
    model: &ModelGraph,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<(ModelGraph, TrainMetrics)> {
    cfg.validate()?;
    train.validate_labels(model.class_count())?;
    test.validate_labels(model.class_count())?;
    let mut model = model.clone();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();

    let mut adam = match cfg.optimizer {
        OptimizerKind::Adam { .. } => Some(AdamState {
            m: GradStore::zeros_like(&model).grads,
            v: GradStore::zeros_like(&model).grads,
            t: 0,
        }),
        OptimizerKind::Sgd => None,
    };

    let mut epoch_train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (mut grads, batch_loss) = batch_gradient(&model, train, chunk, jobs)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / chunk.len() as f32);
            apply_update(&mut model, &grads, cfg, adam.as_mut());
        }
        epoch_train_loss.push(loss_sum / n as f64);
    }

    let test_accuracy = evaluate_accuracy(&model, test)?;
    let metrics = TrainMetrics {
        epoch_train_loss,
        test_accuracy,
        train_samples: n,
        test_samples: test.len(),
    };
    Ok((model, metrics))
}

/// Sum of per-sample gradients and losses over one batch. `jobs == 1`
/// accumulates strictly in sample order; otherwise contiguous chunks are
/// computed in parallel and merged in chunk order.
fn batch_gradient(
    model: &ModelGraph,
    data: &LabeledDataset,
    batch: &[usize],
    jobs: usize,
) -> Result<(GradStore, f64)> {
    if jobs <= 1 || batch.len() < 2 * jobs {
        let mut grads = GradStore::zeros_like(model);
        let mut loss = 0.0f64;
        for &i in batch {
            loss += sample_gradient(model, data, i, &mut grads)?;
        }
        Ok((grads, loss))
    } else {
        let chunk_len = batch.len().div_ceil(jobs);
        let parts: Vec<Result<(GradStore, f64)>> = batch
            .par_chunks(chunk_len)
            .map(|chunk| {
                let mut grads = GradStore::zeros_like(model);
                let mut loss = 0.0f64;
                for &i in chunk {
                    loss += sample_gradient(model, data, i, &mut grads)?;
                }
                Ok((grads, loss))
            })
            .collect();
        let mut grads = GradStore::zeros_like(model);
        let mut loss = 0.0f64;
        for part in parts {
            let (g, l) = part?;
            grads.add(&g);
            loss += l;
        }
        Ok((grads, loss))
    }
}

/// Cross-entropy loss and gradient for one sample.
fn sample_gradient(
    model: &ModelGraph,
    data: &LabeledDataset,
    index: usize,
    grads: &mut GradStore,
) -> Result<f64> {
    let x = data.sample(index);
    let y = data.labels[index];
    let tape = model.forward_span(0, model.layer_count(), &x)?;
    let (loss, grad_logits) = softmax_cross_entropy(tape.output(), y);
    model.backward_span(&tape, &grad_logits, Some(grads), false)?;
    Ok(loss)
}

/// Numerically shifted softmax + CE; returns (loss, dL/dlogits).
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> (f64, Tensor) {
    let z = logits.data();
    let max = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exp: Vec<f64> = z.iter().map(|v| ((v - max) as f64).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let loss = -(exp[label] / sum).ln();
    let grad: Vec<f32> = exp
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let p = (e / sum) as f32;
            if i == label {
                p - 1.0
            } else {
                p
            }
        })
        .collect();
    (loss, Tensor::from_vec(grad))
}

fn apply_update(
    model: &mut ModelGraph,
    grads: &GradStore,
    cfg: &TrainConfig,
    adam: Option<&mut AdamState>,
) {
    match (cfg.optimizer, adam) {
        (OptimizerKind::Sgd, _) => {
            for (layer, g) in model.layers_mut().iter_mut().zip(&grads.grads) {
                if let Some((gw, gb)) = g {
                    let w = layer.weight.as_mut().unwrap();
                    crate::linalg::axpy(-cfg.learning_rate, gw.data(), w.data_mut());
                    let b = layer.bias.as_mut().unwrap();
                    crate::linalg::axpy(-cfg.learning_rate, gb.data(), b.data_mut());
                }
            }
        }
        (OptimizerKind::Adam { beta1, beta2, eps }, Some(state)) => {
            state.t += 1;
            let t = state.t as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for (idx, layer) in model.layers_mut().iter_mut().enumerate() {
                let Some((gw, gb)) = grads.grads[idx].as_ref() else {
                    continue;
                };
                let (mw, mb) = state.m[idx].as_mut().unwrap();
                let (vw, vb) = state.v[idx].as_mut().unwrap();
                adam_step(
                    layer.weight.as_mut().unwrap().data_mut(),
                    gw.data(),
                    mw.data_mut(),
                    vw.data_mut(),
                    cfg.learning_rate as f64,
                    beta1,
                    beta2,
                    eps,
                    bc1,
                    bc2,
                );
                adam_step(
                    layer.bias.as_mut().unwrap().data_mut(),
                    gb.data(),
                    mb.data_mut(),
                    vb.data_mut(),
                    cfg.learning_rate as f64,
                    beta1,
                    beta2,
                    eps,
                    bc1,
                    bc2,
                );
            }
        }
        (OptimizerKind::Adam { .. }, None) => unreachable!("adam state allocated with config"),
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_step(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bias_c1: f64,
    bias_c2: f64,
) {
    for i in 0..param.len() {
        let g = grad[i] as f64;
        let mi = beta1 * m[i] as f64 + (1.0 - beta1) * g;
        let vi = beta2 * v[i] as f64 + (1.0 - beta2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let m_hat = mi / bias_c1;
        let v_hat = vi / bias_c2;
        param[i] -= (lr * m_hat / (v_hat.sqrt() + eps)) as f32;
    }
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate_accuracy(model: &ModelGraph, data: &LabeledDataset) -> Result<f64> {
    let correct: usize = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let logits = model.forward(&data.sample(i)).expect("validated shapes");
            usize::from(argmax(logits.data()) == data.labels[i])
        })
        .sum();
    Ok(correct as f64 / data.len() as f64)
}
