//! Binary model format.
//!
//! ```text
//! "CSHW" | version u8 (0x01) | manifest_len u32 LE | manifest (UTF-8 JSON)
//! | zero padding to a 16-byte file offset | blob section
//! ```
//!
//! The manifest lists the layer table, shapes, numeric mode, activation
//! quantization parameters (scales as decimal strings), requantization
//! multipliers and the offset/length of every weight blob. Blob offsets are
//! relative to the start of the blob section and 16-byte aligned. All
//! payloads are little-endian: f32 weights, or i8 weights with i32 biases.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LoadError, Result};
use crate::fixed_point::FixedPointMultiplier;
use crate::quant::QuantParams;
use crate::tensor::{DType, Shape};

use super::{LayerSpec, ModelGraph, NumericMode, QuantTable, Weight, WeightData};

pub const MAGIC: &[u8; 4] = b"CSHW";
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 9;
const BLOB_ALIGN: usize = 16;

#[derive(Serialize, Deserialize)]
struct Manifest {
    mode: NumericMode,
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    meta: BTreeMap<String, String>,
    activations: Vec<ActivationEntry>,
    multipliers: Vec<MultiplierEntry>,
    blobs: Vec<BlobEntry>,
    blob_bytes: usize,
}

#[derive(Serialize, Deserialize)]
struct ActivationEntry {
    tensor: String,
    scale: String,
    zero_point: i32,
}

#[derive(Serialize, Deserialize)]
struct MultiplierEntry {
    tensor: String,
    mantissa: i32,
    exponent: i32,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    dtype: DType,
    shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zero_point: Option<i32>,
    offset: usize,
    length: usize,
}

/// Serializes a graph to the model file layout.
pub fn to_bytes(g: &ModelGraph) -> Vec<u8> {
    let mut blob = Vec::new();
    let mut blobs = Vec::with_capacity(g.weights.len());
    for (name, w) in &g.weights {
        blob.resize(blob.len().next_multiple_of(BLOB_ALIGN), 0);
        let offset = blob.len();
        match &w.data {
            WeightData::F32(v) => v
                .iter()
                .for_each(|x| blob.extend_from_slice(&x.to_le_bytes())),
            WeightData::I8(v) => blob.extend(v.iter().map(|&x| x as u8)),
            WeightData::I32(v) => v
                .iter()
                .for_each(|x| blob.extend_from_slice(&x.to_le_bytes())),
        }
        blobs.push(BlobEntry {
            name: name.clone(),
            dtype: w.data.dtype(),
            shape: w.shape.clone(),
            scale: w.params.map(|p| p.scale().to_string()),
            zero_point: w.params.map(|p| p.zero_point()),
            offset,
            length: blob.len() - offset,
        });
    }
    let (activations, multipliers) = match &g.quant {
        None => (Vec::new(), Vec::new()),
        Some(q) => (
            q.activations
                .iter()
                .map(|(t, p)| ActivationEntry {
                    tensor: t.clone(),
                    scale: p.scale().to_string(),
                    zero_point: p.zero_point(),
                })
                .collect(),
            q.multipliers
                .iter()
                .flat_map(|(t, ms)| {
                    ms.iter().map(move |m| MultiplierEntry {
                        tensor: t.clone(),
                        mantissa: m.mantissa(),
                        exponent: m.exponent(),
                    })
                })
                .collect(),
        ),
    };
    let manifest = Manifest {
        mode: g.mode,
        input_shape: g.input_shape.clone(),
        layers: g.layers.clone(),
        meta: g.meta.clone(),
        activations,
        multipliers,
        blobs,
        blob_bytes: blob.len(),
    };
    let text = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut out = Vec::with_capacity(HEADER_LEN + text.len() + BLOB_ALIGN + blob.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    out.resize(out.len().next_multiple_of(BLOB_ALIGN), 0);
    out.extend_from_slice(&blob);
    out
}

pub fn save_model(g: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(g))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    from_bytes(&fs::read(path)?)
}

fn manifest_err(e: impl std::fmt::Display) -> LoadError {
    LoadError::Manifest(e.to_string())
}

fn parse_params(scale: &str, zero_point: i32) -> std::result::Result<QuantParams, LoadError> {
    let scale: f32 = scale.parse().map_err(manifest_err)?;
    QuantParams::new(scale, zero_point).map_err(manifest_err)
}

/// Decodes a model file, validating the header, manifest and blob layout.
pub fn from_bytes(bytes: &[u8]) -> Result<ModelGraph> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(LoadError::BadMagic.into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(LoadError::Truncated {
            needed: HEADER_LEN,
            found: bytes.len(),
        }
        .into());
    }
    if bytes[4] != VERSION {
        return Err(LoadError::Version(bytes[4]).into());
    }
    let manifest_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let manifest_end = HEADER_LEN + manifest_len;
    if bytes.len() < manifest_end {
        return Err(LoadError::Truncated {
            needed: manifest_end,
            found: bytes.len(),
        }
        .into());
    }
    let manifest: Manifest =
        serde_json::from_slice(&bytes[HEADER_LEN..manifest_end]).map_err(manifest_err)?;

    let blob_start = manifest_end.next_multiple_of(BLOB_ALIGN);
    let needed = blob_start + manifest.blob_bytes;
    if bytes.len() < needed {
        return Err(LoadError::Truncated {
            needed,
            found: bytes.len(),
        }
        .into());
    }
    if bytes.len() != needed {
        return Err(LoadError::BlobSection {
            declared: manifest.blob_bytes,
            found: bytes.len() - blob_start.min(bytes.len()),
        }
        .into());
    }
    let blob = &bytes[blob_start..];

    let mut weights = BTreeMap::new();
    for e in &manifest.blobs {
        let expected = e.shape.numel() * e.dtype.size_of();
        if e.length != expected || e.offset % BLOB_ALIGN != 0 || e.offset + e.length > blob.len() {
            return Err(LoadError::BlobLength {
                name: e.name.clone(),
                declared: e.length,
                expected,
            }
            .into());
        }
        let raw = &blob[e.offset..e.offset + e.length];
        let data = match e.dtype {
            DType::F32 => WeightData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::I8 => WeightData::I8(raw.iter().map(|&b| b as i8).collect()),
            DType::I32 => WeightData::I32(
                raw.chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
        };
        let params = match (&e.scale, e.zero_point) {
            (Some(s), Some(z)) => Some(parse_params(s, z)?),
            (None, None) => None,
            _ => {
                return Err(manifest_err(format!(
                    "blob {} has partial quantization parameters",
                    e.name
                ))
                .into())
            }
        };
        let w = Weight {
            shape: e.shape.clone(),
            data,
            params,
        };
        if weights.insert(e.name.clone(), w).is_some() {
            return Err(manifest_err(format!("duplicate blob {}", e.name)).into());
        }
    }

    let quant = match manifest.mode {
        NumericMode::Float32 => None,
        NumericMode::Int8 => {
            let mut table = QuantTable::default();
            for a in &manifest.activations {
                table
                    .activations
                    .insert(a.tensor.clone(), parse_params(&a.scale, a.zero_point)?);
            }
            for m in &manifest.multipliers {
                let fp = FixedPointMultiplier::from_parts(m.mantissa, m.exponent)
                    .map_err(manifest_err)?;
                table
                    .multipliers
                    .entry(m.tensor.clone())
                    .or_default()
                    .push(fp);
            }
            Some(table)
        }
    };

    let g = ModelGraph {
        input_shape: manifest.input_shape,
        layers: manifest.layers,
        weights,
        mode: manifest.mode,
        quant,
        meta: manifest.meta,
    };
    g.validate().map_err(manifest_err)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, LayerKind};
    use crate::kernels::Activation;
    use crate::LoadError;

    fn tiny() -> ModelGraph {
        GraphBuilder::new(Shape::new(vec![1, 6]).unwrap())
            .layer(
                "fc",
                LayerKind::Dense {
                    units: 3,
                    activation: Activation::Relu6,
                },
            )
            .layer("softmax", LayerKind::Softmax)
            .build(11)
            .unwrap()
    }

    fn load_err(bytes: &[u8]) -> LoadError {
        match from_bytes(bytes) {
            Err(crate::Error::Load(e)) => e,
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let g = tiny();
        let bytes = to_bytes(&g);
        assert_eq!(&bytes[..4], b"CSHW");
        assert_eq!(bytes[4], 1);
        assert_eq!(from_bytes(&bytes).unwrap(), g);
    }

    #[test]
    fn distinct_errors() {
        let bytes = to_bytes(&tiny());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(load_err(&bad), LoadError::BadMagic);

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(load_err(&bad), LoadError::Version(2));

        assert!(matches!(
            load_err(&bytes[..bytes.len() - 3]),
            LoadError::Truncated { .. }
        ));
        assert!(matches!(load_err(&bytes[..7]), LoadError::Truncated { .. }));

        let mut bad = bytes.clone();
        bad.extend_from_slice(&[0; 5]);
        assert!(matches!(load_err(&bad), LoadError::BlobSection { .. }));
    }

    #[test]
    fn blob_length_disagreement() {
        let g = tiny();
        let bytes = to_bytes(&g);
        let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[9..9 + len]).unwrap();
        // fc.bias is 3 f32 = 12 bytes; claim 8
        let tampered = text.replacen("\"length\":12", "\"length\":8", 1);
        assert_ne!(tampered, text);
        let mut out = Vec::new();
        out.extend_from_slice(b"CSHW\x01");
        out.extend_from_slice(&(tampered.len() as u32).to_le_bytes());
        out.extend_from_slice(tampered.as_bytes());
        out.resize(out.len().next_multiple_of(16), 0);
        out.extend_from_slice(&bytes[(9 + len).next_multiple_of(16)..]);
        assert!(matches!(load_err(&out), LoadError::BlobLength { .. }));
    }
}
