//! The CBVM model container.
//!
//! Layout: magic `CBVM`, u16 LE version, u32 LE header length, a UTF-8
//! JSON header (kind, kind-specific metadata, tensor manifest with
//! offsets/shapes/dtypes), then the raw little-endian tensor payloads in
//! manifest order. Round-trips are bit-exact.

use super::{LayerSpec, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CBVM";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// A parsed container: a kind tag, free-form JSON metadata, and named
/// tensors.
#[derive(Debug)]
pub struct CbvmPayload {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: u64,
    shape: Vec<usize>,
    dtype: String,
}

pub fn write_cbvm(path: &Path, payload: &CbvmPayload) -> Result<()> {
    let mut entries = Vec::with_capacity(payload.tensors.len());
    let mut offset = 0u64;
    for nt in &payload.tensors {
        entries.push(TensorEntry {
            name: nt.name.clone(),
            offset,
            shape: nt.tensor.shape().to_vec(),
            dtype: "f32".into(),
        });
        offset += (nt.tensor.len() * 4) as u64;
    }
    let header = Header {
        kind: payload.kind.clone(),
        meta: payload.meta.clone(),
        tensors: entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for nt in &payload.tensors {
        for v in nt.tensor.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_cbvm(path: &Path) -> Result<CbvmPayload> {
    let file_name = path.display().to_string();
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)
        .map_err(|_| Error::format(&file_name, "file too short for magic bytes"))?;
    if &magic != MAGIC {
        return Err(Error::format(
            &file_name,
            format!("bad magic bytes {:?}, expected \"CBVM\"", magic),
        ));
    }
    let mut u16buf = [0u8; 2];
    f.read_exact(&mut u16buf)
        .map_err(|_| Error::format(&file_name, "missing version field"))?;
    let version = u16::from_le_bytes(u16buf);
    if version != VERSION {
        return Err(Error::format(
            &file_name,
            format!("unsupported version {}", version),
        ));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)
        .map_err(|_| Error::format(&file_name, "missing header length field"))?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)
        .map_err(|_| Error::format(&file_name, "truncated JSON header"))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::format(&file_name, format!("header: {}", e)))?;

    let mut payload_bytes = Vec::new();
    f.read_to_end(&mut payload_bytes)?;

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        if entry.dtype != "f32" {
            return Err(Error::format(
                &file_name,
                format!("tensor {}: unsupported dtype {}", entry.name, entry.dtype),
            ));
        }
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + count * 4;
        if end > payload_bytes.len() {
            return Err(Error::format(
                &file_name,
                format!("truncated payload: tensor {} is missing bytes", entry.name),
            ));
        }
        let data: Vec<f32> = payload_bytes[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(NamedTensor {
            name: entry.name.clone(),
            tensor: Tensor::new(entry.shape.clone(), data)?,
        });
    }
    Ok(CbvmPayload {
        kind: header.kind,
        meta: header.meta,
        tensors,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    embedding_layer: usize,
    class_count: usize,
}

impl ModelGraph {
    pub fn save(&self, path: &Path) -> Result<()> {
        if self.layers().is_empty() {
            return Err(Error::InvalidArg(
                "refusing to serialize a model with an empty layer list".into(),
            ));
        }
        let meta = ModelMeta {
            input_shape: self.input_shape().to_vec(),
            layers: self.layers().iter().map(|l| l.spec.clone()).collect(),
            embedding_layer: self.embedding_layer(),
            class_count: self.class_count(),
        };
        let mut tensors = Vec::new();
        for (i, layer) in self.layers().iter().enumerate() {
            if let (Some(w), Some(b)) = (&layer.weight, &layer.bias) {
                tensors.push(NamedTensor {
                    name: format!("layer{}.weight", i),
                    tensor: w.clone(),
                });
                tensors.push(NamedTensor {
                    name: format!("layer{}.bias", i),
                    tensor: b.clone(),
                });
            }
        }
        write_cbvm(
            path,
            &CbvmPayload {
                kind: "model".into(),
                meta: serde_json::to_value(&meta)?,
                tensors,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file_name = path.display().to_string();
        let payload = read_cbvm(path)?;
        if payload.kind != "model" {
            return Err(Error::format(
                &file_name,
                format!("kind field is {:?}, expected \"model\"", payload.kind),
            ));
        }
        let meta: ModelMeta = serde_json::from_value(payload.meta)
            .map_err(|e| Error::format(&file_name, format!("meta: {}", e)))?;
        if meta.layers.is_empty() {
            return Err(Error::format(&file_name, "meta.layers is empty"));
        }
        let mut model = ModelGraph::new(
            meta.input_shape,
            meta.layers,
            meta.embedding_layer,
            meta.class_count,
        )?;
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            if layer.weight.is_none() {
                continue;
            }
            let wname = format!("layer{}.weight", i);
            let bname = format!("layer{}.bias", i);
            let find = |name: &str| -> Result<&NamedTensor> {
                payload
                    .tensors
                    .iter()
                    .find(|t| t.name == name)
                    .ok_or_else(|| Error::format(&file_name, format!("missing tensor {}", name)))
            };
            let w = find(&wname)?;
            if w.tensor.shape() != layer.weight.as_ref().unwrap().shape() {
                return Err(Error::format(
                    &file_name,
                    format!(
                        "tensor {}: shape manifest {:?} does not match layer spec {:?}",
                        wname,
                        w.tensor.shape(),
                        layer.weight.as_ref().unwrap().shape()
                    ),
                ));
            }
            let b = find(&bname)?;
            if b.tensor.shape() != layer.bias.as_ref().unwrap().shape() {
                return Err(Error::format(
                    &file_name,
                    format!("tensor {}: shape manifest mismatch", bname),
                ));
            }
            layer.weight = Some(w.tensor.clone());
            layer.bias = Some(b.tensor.clone());
        }
        Ok(model)
    }
}
