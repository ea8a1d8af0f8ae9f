//! Checkpoint container.
//!
//! Layout: an 8-byte little-endian header length `N`, `N` bytes of UTF-8
//! JSON, then the payload. The header maps each parameter name to
//! `{"dtype": "f32", "shape": [...], "data_offsets": [start, end]}` with
//! byte offsets relative to the payload start, and holds the model
//! configuration under `"__config__"`. Tensors are stored in name order as
//! contiguous little-endian `f32`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use viewsplat_core::config::ModelConfig;
use viewsplat_core::model::Model;
use viewsplat_core::Tensor;

use crate::error::{io_err, Error, Result};

pub const CONFIG_KEY: &str = "__config__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

pub fn to_bytes(model: &Model<f32>) -> Vec<u8> {
    let mut params: Vec<_> = model.params.iter().collect();
    params.sort_by(|a, b| a.name.cmp(&b.name));
    let mut header = serde_json::Map::new();
    header.insert(CONFIG_KEY.into(), serde_json::to_value(model.config).expect("config serializes"));
    let mut payload = Vec::with_capacity(model.params.numel() * 4);
    for p in &params {
        let start = payload.len() as u64;
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let entry = Entry {
            dtype: "f32".into(),
            shape: p.value.shape().to_vec(),
            data_offsets: [start, payload.len() as u64],
        };
        header.insert(p.name.clone(), serde_json::to_value(entry).expect("entry serializes"));
    }
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

/// Parses a checkpoint. With `config_override` the parameters are loaded
/// into a model of that configuration and any shape disagreement is an
/// error.
pub fn from_bytes(bytes: &[u8], path: &Path, config_override: Option<ModelConfig>) -> Result<Model<f32>> {
    let fmt = |offset: u64, detail: String| Error::Format {
        path: path.into(),
        offset,
        detail,
    };
    if bytes.len() < 8 {
        return Err(fmt(0, format!("file is {} bytes, shorter than the length prefix", bytes.len())));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let payload_start = 8u64
        .checked_add(n)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| fmt(0, format!("header length {n} exceeds file size {}", bytes.len())))?;
    let header: BTreeMap<String, serde_json::Value> =
        serde_json::from_slice(&bytes[8..payload_start as usize]).map_err(|e| fmt(8 + e.column() as u64, format!("bad header JSON: {e}")))?;
    let stored: ModelConfig = header
        .get(CONFIG_KEY)
        .cloned()
        .ok_or_else(|| fmt(8, format!("header has no {CONFIG_KEY:?} entry")))
        .and_then(|v| serde_json::from_value(v).map_err(|e| fmt(8, format!("bad {CONFIG_KEY}: {e}"))))?;
    let config = config_override.unwrap_or(stored);
    let payload = &bytes[payload_start as usize..];

    let mut entries: Vec<(String, Entry)> = header
        .into_iter()
        .filter(|(k, _)| k != CONFIG_KEY)
        .map(|(k, v)| {
            let e: Entry = serde_json::from_value(v).map_err(|e| fmt(8, format!("bad entry {k:?}: {e}")))?;
            Ok((k, e))
        })
        .collect::<Result<_>>()?;
    entries.sort_by_key(|(_, e)| e.data_offsets);
    let mut cursor = 0u64;
    for (name, e) in &entries {
        let [s, end] = e.data_offsets;
        let at = payload_start + s;
        if e.dtype != "f32" {
            return Err(fmt(at, format!("{name}: unsupported dtype {:?}", e.dtype)));
        }
        if s != cursor {
            return Err(fmt(at, format!("{name}: data starts at {s}, expected {cursor} (gap or overlap)")));
        }
        let numel: u64 = e.shape.iter().map(|&d| d as u64).product();
        if end < s || end - s != 4 * numel {
            return Err(fmt(at, format!("{name}: {} bytes for shape {:?}", end.saturating_sub(s), e.shape)));
        }
        cursor = end;
    }
    if cursor != payload.len() as u64 {
        return Err(fmt(
            payload_start + cursor,
            format!("payload is {} bytes but tensors cover {cursor}", payload.len()),
        ));
    }

    let mut model = Model::<f32>::new(config, 0)?;
    if entries.len() != model.params.len() {
        return Err(Error::Invalid(format!(
            "{}: checkpoint holds {} tensors, configuration expects {}",
            path.display(),
            entries.len(),
            model.params.len()
        )));
    }
    for (name, e) in entries {
        let [s, end] = e.data_offsets;
        let data = payload[s as usize..end as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        model.params.set(&name, Tensor::new(e.shape, data)?)?;
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &Model<f32>) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path, config_override: Option<ModelConfig>) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    from_bytes(&bytes, path, config_override)
}
