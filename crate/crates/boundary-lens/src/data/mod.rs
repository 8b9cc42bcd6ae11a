//! Dataset ingestion, activation sets, and portable containers.

mod container;
mod digits;
mod euclid;
mod extract;
mod idx;

pub use container::{read_tensor, write_tensor, DType, TensorData};
pub use digits::generate_digit_dataset;
pub use euclid::{import_euclidicity, EuclidicityTable};
pub use extract::{extract_concept_activations, ExtractionOutcome};
pub use idx::{load_mnist_idx, write_idx_images, write_idx_labels};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Inputs plus integer labels. Inputs are stored as one tensor whose
/// leading extent is the sample count (e.g. `[N,1,28,28]` or `[N,d]`).
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().is_empty() || inputs.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "input tensor {:?} does not hold {} samples",
                inputs.shape(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptySet("dataset has no samples".into()));
        }
        Ok(LabeledDataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape (the input shape with the batch extent dropped).
    pub fn sample_shape(&self) -> Vec<usize> {
        self.inputs.shape()[1..].to_vec()
    }

    /// Copy of sample `i` as its own tensor.
    pub fn sample(&self, i: usize) -> Tensor {
        let shape = self.sample_shape();
        let stride: usize = shape.iter().product();
        let data = self.inputs.data()[i * stride..(i + 1) * stride].to_vec();
        Tensor::new(shape, data).unwrap()
    }

    pub fn validate_labels(&self, class_count: usize) -> Result<()> {
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= class_count {
                return Err(Error::InvalidArg(format!(
                    "label {} at row {} out of range 0..{}",
                    l, i, class_count
                )));
            }
        }
        Ok(())
    }

    /// The first `n` samples (or all of them when `n >= len`).
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        let stride: usize = self.sample_shape().iter().product();
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = n;
        LabeledDataset {
            inputs: Tensor::new(shape, self.inputs.data()[..n * stride].to_vec()).unwrap(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

/// Layer-ℓ latent vectors for one concept, with provenance indices into
/// the dataset the activations came from.
#[derive(Debug, Clone)]
pub struct ActivationSet {
    pub concept: usize,
    pub layer: usize,
    /// `n × m` matrix of latent vectors.
    pub activations: Tensor,
    pub source_indices: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ActivationSidecar {
    concept: usize,
    layer: usize,
    source_indices: Vec<usize>,
}

impl ActivationSet {
    pub fn new(
        concept: usize,
        layer: usize,
        activations: Tensor,
        source_indices: Vec<usize>,
    ) -> Result<Self> {
        if activations.shape().len() != 2 || activations.shape()[0] != source_indices.len() {
            return Err(Error::ShapeMismatch(format!(
                "activation tensor {:?} does not align with {} source indices",
                activations.shape(),
                source_indices.len()
            )));
        }
        activations.ensure_finite("activation set")?;
        Ok(ActivationSet {
            concept,
            layer,
            activations,
            source_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.source_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.activations.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.activations.row(i)
    }

    /// Persist as a tensor container plus a JSON sidecar holding the
    /// concept id, layer, and provenance indices.
    pub fn save(&self, container_path: &Path) -> Result<()> {
        write_tensor(
            container_path,
            &TensorData::F32(self.activations.data().to_vec()),
            self.activations.shape(),
        )?;
        let sidecar = ActivationSidecar {
            concept: self.concept,
            layer: self.layer,
            source_indices: self.source_indices.clone(),
        };
        let json_path = container_path.with_extension("json");
        std::fs::write(json_path, serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(container_path: &Path) -> Result<Self> {
        let (data, shape) = read_tensor(container_path)?;
        let values = match data {
            TensorData::F32(v) => v,
            other => {
                return Err(Error::format(
                    container_path.display().to_string(),
                    format!("expected f32 activations, found {:?}", other.dtype()),
                ))
            }
        };
        let json_path = container_path.with_extension("json");
        let sidecar: ActivationSidecar =
            serde_json::from_slice(&std::fs::read(&json_path).map_err(|e| {
                Error::format(json_path.display().to_string(), format!("sidecar: {}", e))
            })?)?;
        ActivationSet::new(
            sidecar.concept,
            sidecar.layer,
            Tensor::new(shape, values)?,
            sidecar.source_indices,
        )
    }
}
