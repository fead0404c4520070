//! `ckpt-v1` container: one UTF-8 JSON header line describing the model
//! kind, its spec and every tensor (name and shape, in storage order),
//! followed by the tensors as little-endian `f32` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Autoencoder, AutoencoderSpec, Classifier, ClassifierSpec};
use crate::error::{Error, Result};
use crate::rng;

pub const CHECKPOINT_VERSION: &str = "ckpt-v1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
enum ModelHeader {
    Classifier { spec: ClassifierSpec },
    Autoencoder { spec: AutoencoderSpec },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: String,
    dtype: String,
    #[serde(flatten)]
    model: ModelHeader,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Classifier(Classifier),
    Autoencoder(Autoencoder),
}

fn write(
    path: &Path,
    model: ModelHeader,
    layout: Vec<(String, Vec<usize>)>,
    params: Vec<&[f64]>,
) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION.into(),
        dtype: "f32-le".into(),
        model,
        tensors: layout
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for p in params {
        for v in p {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_classifier(path: &Path, model: &Classifier) -> Result<()> {
    write(
        path,
        ModelHeader::Classifier {
            spec: model.spec.clone(),
        },
        model.tensor_layout(),
        model.params(),
    )
}

pub fn save_autoencoder(path: &Path, model: &Autoencoder) -> Result<()> {
    write(
        path,
        ModelHeader::Autoencoder {
            spec: model.spec.clone(),
        },
        model.tensor_layout(),
        model.params(),
    )
}

fn fill(
    header_tensors: &[TensorEntry],
    layout: Vec<(String, Vec<usize>)>,
    params: Vec<&mut [f64]>,
    blob: &[u8],
) -> Result<()> {
    if header_tensors.len() != layout.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, header lists {}",
            layout.len(),
            header_tensors.len()
        )));
    }
    let mut offset = 0usize;
    for ((entry, (name, shape)), dst) in header_tensors.iter().zip(layout).zip(params) {
        if entry.name != name || entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let len = dst.len() * 4;
        let src = blob.get(offset..offset + len).ok_or_else(|| {
            Error::Checkpoint(format!("truncated data in tensor {name} at byte {offset}"))
        })?;
        for (d, chunk) in dst.iter_mut().zip(src.chunks_exact(4)) {
            *d = f64::from(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
        }
        offset += len;
    }
    if offset != blob.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after tensors",
            blob.len() - offset
        )));
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..split])?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version '{}', expected {CHECKPOINT_VERSION}",
            header.version
        )));
    }
    if header.dtype != "f32-le" {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype '{}'",
            header.dtype
        )));
    }
    let blob = &bytes[split + 1..];
    // Parameters are overwritten; the seed only fixes the allocation.
    let mut r = rng::stream(0);
    match header.model {
        ModelHeader::Classifier { spec } => {
            let mut model = Classifier::new(spec, &mut r)?;
            let layout = model.tensor_layout();
            fill(&header.tensors, layout, model.params_mut(), blob)?;
            Ok(Checkpoint::Classifier(model))
        }
        ModelHeader::Autoencoder { spec } => {
            let mut model = Autoencoder::new(spec, &mut r)?;
            let layout = model.tensor_layout();
            fill(&header.tensors, layout, model.params_mut(), blob)?;
            Ok(Checkpoint::Autoencoder(model))
        }
    }
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    match load_checkpoint(path)? {
        Checkpoint::Classifier(c) => Ok(c),
        Checkpoint::Autoencoder(_) => Err(Error::Checkpoint(format!(
            "{} holds an autoencoder, expected a classifier",
            path.display()
        ))),
    }
}

pub fn load_autoencoder(path: &Path) -> Result<Autoencoder> {
    match load_checkpoint(path)? {
        Checkpoint::Autoencoder(a) => Ok(a),
        Checkpoint::Classifier(_) => Err(Error::Checkpoint(format!(
            "{} holds a classifier, expected an autoencoder",
            path.display()
        ))),
    }
}
