//! Weight file format.
//!
//! ```text
//! b"CFOSNN1\0"
//! {"format_version":1,"rng_seed":..,"layers":[{kind,in_channels,out_channels,weight_bytes,bias_bytes},..]}\n
//! little-endian f32 blobs: weights then bias, layer by layer
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{LayerKind, LayerParams, LayerSpec, ModelParams};

pub const MAGIC: &[u8; 8] = b"CFOSNN1\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    rng_seed: u64,
    layers: Vec<LayerHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerHeader {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skip: Option<usize>,
    in_channels: usize,
    out_channels: usize,
    weight_bytes: usize,
    bias_bytes: usize,
}

pub fn params_to_bytes(model: &ModelParams<f32>) -> Result<Vec<u8>> {
    model.validate()?;
    let header = Header {
        format_version: FORMAT_VERSION,
        rng_seed: model.rng_seed,
        layers: model
            .layers
            .iter()
            .map(|spec| LayerHeader {
                kind: spec.kind.name().to_string(),
                skip: match spec.kind {
                    LayerKind::Concat { skip } => Some(skip),
                    _ => None,
                },
                in_channels: spec.in_channels,
                out_channels: spec.out_channels,
                weight_bytes: spec.weight_len() * 4,
                bias_bytes: spec.bias_len() * 4,
            })
            .collect(),
    };
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header).map_err(|e| Error::Parse {
        context: "weight header".into(),
        reason: e.to_string(),
    })?);
    out.push(b'\n');
    for p in &model.params {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<ModelParams<f32>> {
    if bytes.len() < MAGIC.len() {
        if MAGIC.starts_with(bytes) {
            return Err(Error::Truncated("file ends inside the magic bytes".into()));
        }
        return Err(Error::BadMagic);
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Truncated("header is not terminated".into()))?;
    let header: Header = serde_json::from_slice(&rest[..nl]).map_err(|e| Error::Parse {
        context: "weight header".into(),
        reason: e.to_string(),
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Parse {
            context: "weight header".into(),
            reason: format!("unsupported format_version {}", header.format_version),
        });
    }
    let mut blob = &rest[nl + 1..];
    let mut layers = Vec::with_capacity(header.layers.len());
    let mut params = Vec::with_capacity(header.layers.len());
    for (i, lh) in header.layers.iter().enumerate() {
        let spec = LayerSpec {
            kind: LayerKind::from_name(&lh.kind, lh.skip)?,
            in_channels: lh.in_channels,
            out_channels: lh.out_channels,
        };
        if lh.weight_bytes != spec.weight_len() * 4 || lh.bias_bytes != spec.bias_len() * 4 {
            return Err(Error::SizeMismatch(format!(
                "layer {i} ({}) declares {}+{} bytes, its shape needs {}+{}",
                lh.kind,
                lh.weight_bytes,
                lh.bias_bytes,
                spec.weight_len() * 4,
                spec.bias_len() * 4
            )));
        }
        let need = lh.weight_bytes + lh.bias_bytes;
        if blob.len() < need {
            return Err(Error::Truncated(format!(
                "layer {i} needs {need} bytes, {} remain",
                blob.len()
            )));
        }
        let floats = |b: &[u8]| -> Vec<f32> {
            b.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        };
        params.push(LayerParams {
            weights: floats(&blob[..lh.weight_bytes]),
            bias: floats(&blob[lh.weight_bytes..need]),
        });
        blob = &blob[need..];
        layers.push(spec);
    }
    if !blob.is_empty() {
        return Err(Error::SizeMismatch(format!(
            "{} trailing bytes after the last layer",
            blob.len()
        )));
    }
    let model = ModelParams {
        layers,
        params,
        rng_seed: header.rng_seed,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_params(model: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, params_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    params_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
