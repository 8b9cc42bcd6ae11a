//! Sequential model pipelines with reverse-mode differentiation.
//!
//! A [`ModelGraph`] is an ordered list of layers (conv / pool / dense /
//! relu / flatten) evaluated one sample at a time. Positions between
//! layers are "boundaries": boundary `0` is the network input, boundary
//! `len()` is the logit output, and every operation that talks about "layer
//! ℓ activations" means the tensor at boundary ℓ. The designated embedding
//! boundary is where concept activations are extracted.

mod io;
mod layers;
mod train;

pub use io::{read_cbvm, write_cbvm, CbvmPayload, NamedTensor};
pub use train::{train_model, OptimizerKind, TrainConfig, TrainMetrics};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool2d {
        kernel: usize,
    },
    Dense {
        out_features: usize,
    },
    Relu,
    Flatten,
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    embedding_layer: usize,
    class_count: usize,
}

/// Activations at every boundary of an evaluated span.
pub struct Tape {
    pub from: usize,
    pub values: Vec<Tensor>,
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("tape holds at least the input")
    }
}

/// Per-layer weight/bias gradient accumulators.
pub struct GradStore {
    pub grads: Vec<Option<(Tensor, Tensor)>>,
}

impl GradStore {
    pub fn zeros_like(model: &ModelGraph) -> Self {
        let grads = model
            .layers
            .iter()
            .map(|l| {
                l.weight.as_ref().map(|w| {
                    (
                        Tensor::zeros(w.shape()),
                        Tensor::zeros(l.bias.as_ref().expect("bias with weight").shape()),
                    )
                })
            })
            .collect();
        GradStore { grads }
    }

    /// `self += other`, layer by layer.
    pub fn add(&mut self, other: &GradStore) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if let (Some((aw, ab)), Some((bw, bb))) = (a.as_mut(), b.as_ref()) {
                linalg::axpy(1.0, bw.data(), aw.data_mut());
                linalg::axpy(1.0, bb.data(), ab.data_mut());
            }
        }
    }

    pub fn scale(&mut self, alpha: f32) {
        for g in self.grads.iter_mut().flatten() {
            linalg::scale(g.0.data_mut(), alpha);
            linalg::scale(g.1.data_mut(), alpha);
        }
    }
}

impl ModelGraph {
    /// Assemble a pipeline, inferring every intermediate shape.
    ///
    /// `embedding_layer` is a boundary index in `0..=specs.len()`. Weights
    /// are left zero-initialized; call [`ModelGraph::init_weights`] before
    /// training.
    pub fn new(
        input_shape: Vec<usize>,
        specs: Vec<LayerSpec>,
        embedding_layer: usize,
        class_count: usize,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArg("model needs at least one layer".into()));
        }
        if embedding_layer > specs.len() {
            return Err(Error::InvalidArg(format!(
                "embedding boundary {} out of range 0..={}",
                embedding_layer,
                specs.len()
            )));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.clone();
        for (idx, spec) in specs.into_iter().enumerate() {
            let (out_shape, weight, bias) = infer_layer(&spec, &shape).map_err(|e| match e {
                Error::ShapeMismatch(m) => Error::ShapeMismatch(format!("layer {}: {}", idx, m)),
                other => other,
            })?;
            layers.push(Layer {
                spec,
                weight,
                bias,
                in_shape: shape.clone(),
                out_shape: out_shape.clone(),
            });
            shape = out_shape;
        }
        if shape != vec![class_count] {
            return Err(Error::ShapeMismatch(format!(
                "output shape {:?} does not match class count {}",
                shape, class_count
            )));
        }
        Ok(ModelGraph {
            layers,
            input_shape,
            embedding_layer,
            class_count,
        })
    }

    /// Seeded uniform init in ±sqrt(1/fan_in) for weights and biases.
    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let fan_in = match &layer.spec {
                LayerSpec::Conv2d { kernel, .. } => layer.in_shape[0] * kernel * kernel,
                LayerSpec::Dense { .. } => layer.in_shape[0],
                _ => continue,
            };
            let bound = (1.0 / fan_in as f32).sqrt();
            if let Some(w) = layer.weight.as_mut() {
                for v in w.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            if let Some(b) = layer.bias.as_mut() {
                for v in b.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn embedding_layer(&self) -> usize {
        self.embedding_layer
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Per-sample activation shape at a boundary.
    pub fn shape_at(&self, boundary: usize) -> &[usize] {
        if boundary == 0 {
            &self.input_shape
        } else {
            &self.layers[boundary - 1].out_shape
        }
    }

    /// Evaluate layers `from..to`, keeping every intermediate activation.
    pub fn forward_span(&self, from: usize, to: usize, input: &Tensor) -> Result<Tape> {
        if from > to || to > self.layers.len() {
            return Err(Error::InvalidArg(format!(
                "invalid layer span {}..{} for {} layers",
                from,
                to,
                self.layers.len()
            )));
        }
        if input.shape() != self.shape_at(from) {
            return Err(Error::LayerShapeMismatch {
                layer: from,
                expected: self.shape_at(from).to_vec(),
                got: input.shape().to_vec(),
            });
        }
        let mut values = Vec::with_capacity(to - from + 1);
        values.push(input.clone());
        for idx in from..to {
            let next = layers::forward(&self.layers[idx], values.last().unwrap());
            values.push(next);
        }
        Ok(Tape { from, values })
    }

    /// `f_{from,to}(input)` without keeping the tape.
    pub fn forward_to_layer(&self, from: usize, to: usize, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_span(from, to, input)?.values.pop().unwrap())
    }

    /// Full forward pass to the logits.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_to_layer(0, self.layers.len(), input)
    }

    /// Predicted class (argmax of logits, lowest index on ties).
    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        Ok(argmax(self.forward(input)?.data()))
    }

    /// Reverse-mode sweep over a taped span. Returns the gradient with
    /// respect to the boundary-`from` activation; when `grads` is given,
    /// weight/bias gradients are accumulated into it.
    pub fn backward_span(
        &self,
        tape: &Tape,
        grad_output: &Tensor,
        mut grads: Option<&mut GradStore>,
        check_finite: bool,
    ) -> Result<Tensor> {
        let steps = tape.values.len() - 1;
        let mut grad = grad_output.clone();
        if grad.shape() != tape.values[steps].shape() {
            return Err(Error::ShapeMismatch(format!(
                "grad shape {:?} does not match output shape {:?}",
                grad.shape(),
                tape.values[steps].shape()
            )));
        }
        for step in (0..steps).rev() {
            let layer_idx = tape.from + step;
            let layer = &self.layers[layer_idx];
            let input = &tape.values[step];
            let wg = grads.as_deref_mut().and_then(|g| {
                g.grads[layer_idx]
                    .as_mut()
                    .map(|(w, b)| (w as &mut Tensor, b as &mut Tensor))
            });
            grad = layers::backward(layer, input, &grad, wg);
            if check_finite && !grad.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient at layer boundary {}", layer_idx),
                });
            }
        }
        Ok(grad)
    }

    /// Gradient of one logit with respect to the boundary-`layer`
    /// activation, evaluated at `a`.
    pub fn logit_gradient(&self, layer: usize, a: &Tensor, class_index: usize) -> Result<Tensor> {
        if class_index >= self.class_count {
            return Err(Error::InvalidArg(format!(
                "class index {} out of range 0..{}",
                class_index, self.class_count
            )));
        }
        let tape = self.forward_span(layer, self.layers.len(), a)?;
        let mut seed = Tensor::zeros(&[self.class_count]);
        seed.data_mut()[class_index] = 1.0;
        self.backward_span(&tape, &seed, None, true)
    }
}

/// Directional derivative of the class logit along `v`, taken at the
/// boundary-`layer` activation `a`: `∇f_{ℓ,C}(a) · v` by reverse mode.
pub fn directional_logit_derivative(
    model: &ModelGraph,
    layer: usize,
    a: &Tensor,
    v: &Tensor,
    class_index: usize,
) -> Result<f64> {
    if a.shape() != v.shape() {
        return Err(Error::ShapeMismatch(format!(
            "activation shape {:?} vs direction shape {:?}",
            a.shape(),
            v.shape()
        )));
    }
    v.ensure_finite("direction vector")?;
    let grad = model.logit_gradient(layer, a, class_index)?;
    Ok(linalg::dot64(grad.data(), v.data()))
}

pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn infer_layer(
    spec: &LayerSpec,
    in_shape: &[usize],
) -> Result<(Vec<usize>, Option<Tensor>, Option<Tensor>)> {
    match spec {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
        } => {
            if in_shape.len() != 3 {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d expects [C,H,W] input, got {:?}",
                    in_shape
                )));
            }
            let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            if *kernel == 0 || *stride == 0 || h < *kernel || w < *kernel {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d kernel {}x{} stride {} does not fit input {:?}",
                    kernel, kernel, stride, in_shape
                )));
            }
            let oh = (h - kernel) / stride + 1;
            let ow = (w - kernel) / stride + 1;
            Ok((
                vec![*out_channels, oh, ow],
                Some(Tensor::zeros(&[*out_channels, c, *kernel, *kernel])),
                Some(Tensor::zeros(&[*out_channels])),
            ))
        }
        LayerSpec::MaxPool2d { kernel } => {
            if in_shape.len() != 3 {
                return Err(Error::ShapeMismatch(format!(
                    "maxpool2d expects [C,H,W] input, got {:?}",
                    in_shape
                )));
            }
            let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            if *kernel == 0 || h < *kernel || w < *kernel {
                return Err(Error::ShapeMismatch(format!(
                    "maxpool2d kernel {} does not fit input {:?}",
                    kernel, in_shape
                )));
            }
            Ok((vec![c, h / kernel, w / kernel], None, None))
        }
        LayerSpec::Dense { out_features } => {
            if in_shape.len() != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "dense expects flat input, got {:?}",
                    in_shape
                )));
            }
            Ok((
                vec![*out_features],
                Some(Tensor::zeros(&[*out_features, in_shape[0]])),
                Some(Tensor::zeros(&[*out_features])),
            ))
        }
        LayerSpec::Relu => Ok((in_shape.to_vec(), None, None)),
        LayerSpec::Flatten => Ok((vec![in_shape.iter().product()], None, None)),
    }
}

#[cfg(test)]
mod tests;
