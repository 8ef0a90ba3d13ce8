//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u32` manifest length, a JSON
//! manifest (spec, tensor names, shapes, byte offsets into the data block),
//! then the tensors as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{bias_name, weight_name, DenoiserSpec, LayerParams, Parameters};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PDIFFCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("shape mismatch in {field}: expected {expected}, found {found}")]
    ShapeMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: DenoiserSpec,
    tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(p: &Parameters, path: &Path) -> Result<(), CheckpointError> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    for (l, layer) in p.layers().iter().enumerate() {
        for (name, shape, values) in [
            (weight_name(l), vec![layer.out_dim, layer.in_dim], &layer.weight),
            (bias_name(l), vec![layer.out_dim], &layer.bias),
        ] {
            tensors.push(TensorEntry {
                name,
                shape,
                offset: data.len(),
            });
            for v in values {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = serde_json::to_vec(&Manifest {
        spec: p.spec().clone(),
        tensors,
    })
    .map_err(|e| CheckpointError::Manifest(e.to_string()))?;

    let mut bytes = Vec::with_capacity(16 + manifest.len() + data.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&manifest);
    bytes.extend_from_slice(&data);

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    // Write-then-rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
    let end = at.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
    let slice = bytes.get(*at..end).ok_or(CheckpointError::Truncated(what))?;
    *at = end;
    Ok(slice)
}

fn read_u32(bytes: &[u8], at: &mut usize, what: &'static str) -> Result<u32, CheckpointError> {
    let raw = take(bytes, at, 4, what)?;
    Ok(u32::from_le_bytes(raw.try_into().expect("4 bytes")))
}

pub fn load_checkpoint(path: &Path) -> Result<(Parameters, DenoiserSpec), CheckpointError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<(Parameters, DenoiserSpec), CheckpointError> {
    let mut at = 0;
    if take(bytes, &mut at, 8, "magic")? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(bytes, &mut at, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len = read_u32(bytes, &mut at, "manifest length")? as usize;
    let manifest: Manifest = serde_json::from_slice(take(bytes, &mut at, len, "manifest")?)
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let data = &bytes[at..];
    let spec = manifest.spec;
    spec.validate()
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;

    let shapes = spec.layer_shapes();
    if manifest.tensors.len() != 2 * shapes.len() {
        return Err(CheckpointError::ShapeMismatch {
            field: "tensor count".into(),
            expected: 2 * shapes.len(),
            found: manifest.tensors.len(),
        });
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (l, &(out_dim, in_dim)) in shapes.iter().enumerate() {
        let read = |entry: &TensorEntry, name: String, shape: Vec<usize>| -> Result<Vec<f32>, CheckpointError> {
            if entry.name != name {
                return Err(CheckpointError::Manifest(format!(
                    "expected tensor {name}, found {}",
                    entry.name
                )));
            }
            if entry.shape != shape {
                return Err(CheckpointError::ShapeMismatch {
                    field: name,
                    expected: shape.iter().product(),
                    found: entry.shape.iter().product(),
                });
            }
            let count: usize = shape.iter().product();
            let available = data.len().saturating_sub(entry.offset) / 4;
            if available < count {
                return Err(CheckpointError::ShapeMismatch {
                    field: name,
                    expected: count,
                    found: available,
                });
            }
            Ok(data[entry.offset..entry.offset + 4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect())
        };
        let weight = read(&manifest.tensors[2 * l], weight_name(l), vec![out_dim, in_dim])?;
        let bias = read(&manifest.tensors[2 * l + 1], bias_name(l), vec![out_dim])?;
        layers.push(LayerParams {
            out_dim,
            in_dim,
            weight,
            bias,
        });
    }
    let params = Parameters::from_layers(spec.clone(), layers)
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    Ok((params, spec))
}
