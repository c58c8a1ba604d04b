// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary tensor container.
//!
//! Layout: an 8-byte little-endian header length `H`, `H` bytes of compact
//! UTF-8 JSON mapping each tensor name to
//! `{"data_offsets":[begin,end],"dtype":"F32","shape":[..]}` (keys sorted),
//! then the little-endian row-major payload. Offsets are relative to the
//! payload start. String metadata, when present, sits under `__metadata__`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use partylens_core::tensor::{Tensor, TensorStore, DTYPE_F32};
use serde_json::{json, Map, Value};

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("tensor `{0}` overlaps another tensor's bytes")]
    OffsetOverlap(String),
    #[error("payload truncated: need {need} bytes, have {have}")]
    TruncatedPayload { need: u64, have: u64 },
    #[error(transparent)]
    Tensor(#[from] partylens_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, ContainerError>;

/// Serialises a store; identical stores give identical bytes.
pub fn to_bytes(store: &TensorStore) -> Vec<u8> {
    let mut header = Map::new();
    for entry in store.manifest() {
        header.insert(
            entry.name,
            json!({
                "data_offsets": [entry.data_offsets.0, entry.data_offsets.1],
                "dtype": DTYPE_F32,
                "shape": entry.shape,
            }),
        );
    }
    if !store.metadata().is_empty() {
        header.insert(METADATA_KEY.into(), json!(store.metadata()));
    }
    let header = serde_json::to_vec(&Value::Object(header)).expect("header serialises");
    let payload_len: usize = store.iter().map(|(_, t)| t.byte_len()).sum();
    let mut out = Vec::with_capacity(8 + header.len() + payload_len);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in store.iter() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn malformed(msg: impl Into<String>) -> ContainerError {
    ContainerError::MalformedHeader(msg.into())
}

fn as_u64_list(v: &Value, what: &str, name: &str) -> Result<Vec<u64>> {
    v.as_array()
        .ok_or_else(|| malformed(format!("`{name}`: {what} is not an array")))?
        .iter()
        .map(|x| {
            x.as_u64()
                .ok_or_else(|| malformed(format!("`{name}`: {what} holds a non-integer")))
        })
        .collect()
}

/// Parses a container, validating every offset against the payload.
pub fn from_bytes(bytes: &[u8]) -> Result<TensorStore> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| malformed("missing 8-byte length prefix"))?
        .try_into()
        .expect("8 bytes");
    let header_len = u64::from_le_bytes(len_bytes);
    let header_end = 8u64
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| malformed(format!("header length {header_len} exceeds file")))? as usize;
    let header: Value = serde_json::from_slice(&bytes[8..header_end]).map_err(|e| malformed(e.to_string()))?;
    let Value::Object(header) = header else {
        return Err(malformed("header is not a JSON object"));
    };
    let payload = &bytes[header_end..];

    let mut store = TensorStore::new();
    let mut spans: Vec<(u64, u64, String, Vec<usize>)> = Vec::new();
    for (name, entry) in &header {
        if name == METADATA_KEY {
            let meta = entry
                .as_object()
                .ok_or_else(|| malformed("metadata is not an object"))?;
            for (k, v) in meta {
                let v = v
                    .as_str()
                    .ok_or_else(|| malformed(format!("metadata `{k}` is not a string")))?;
                store.set_metadata(k.clone(), v);
            }
            continue;
        }
        let obj = entry
            .as_object()
            .ok_or_else(|| malformed(format!("`{name}` is not an object")))?;
        match obj.get("dtype").and_then(Value::as_str) {
            Some(DTYPE_F32) => {}
            other => return Err(malformed(format!("`{name}`: unsupported dtype {other:?}"))),
        }
        let shape: Vec<usize> = as_u64_list(obj.get("shape").unwrap_or(&Value::Null), "shape", name)?
            .into_iter()
            .map(|d| d as usize)
            .collect();
        let offs = as_u64_list(obj.get("data_offsets").unwrap_or(&Value::Null), "data_offsets", name)?;
        let [begin, end] = offs[..] else {
            return Err(malformed(format!("`{name}`: data_offsets needs two entries")));
        };
        let expected = shape.iter().try_fold(4u64, |acc, &d| acc.checked_mul(d as u64));
        if begin > end || expected != Some(end - begin) {
            return Err(malformed(format!(
                "`{name}`: offsets [{begin}, {end}) disagree with shape {shape:?}"
            )));
        }
        spans.push((begin, end, name.clone(), shape));
    }

    spans.sort();
    let mut cursor = 0u64;
    for (begin, end, name, _) in &spans {
        if *begin < cursor {
            return Err(ContainerError::OffsetOverlap(name.clone()));
        }
        if *begin > cursor {
            return Err(malformed(format!("gap before `{name}`")));
        }
        cursor = *end;
    }
    if cursor > payload.len() as u64 {
        return Err(ContainerError::TruncatedPayload {
            need: cursor,
            have: payload.len() as u64,
        });
    }
    if cursor < payload.len() as u64 {
        return Err(malformed("trailing bytes after last tensor"));
    }
    for (begin, end, name, shape) in spans {
        let data = payload[begin as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

pub fn write(store: &TensorStore, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(store))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<TensorStore> {
    from_bytes(&fs::read(path)?)
}

/// The header object as parsed JSON; useful for inspection tools.
pub fn header(bytes: &[u8]) -> Result<BTreeMap<String, Value>> {
    let len = u64::from_le_bytes(
        bytes
            .get(..8)
            .ok_or_else(|| malformed("missing 8-byte length prefix"))?
            .try_into()
            .expect("8 bytes"),
    ) as usize;
    let raw = bytes.get(8..8 + len).ok_or_else(|| malformed("header truncated"))?;
    serde_json::from_slice(raw).map_err(|e| malformed(e.to_string()))
}
