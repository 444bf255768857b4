//! Parameter checkpoints: u64 LE index length | JSON index | concatenated payloads.
//! Index entries are `{name: {offset, dtype, dims, decay}}`, offsets relative to
//! the first payload byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gean_tensor::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use super::featfile::{decode_payload, encode_payload, DType};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct Entry {
    offset: u64,
    dtype: String,
    dims: Vec<usize>,
    decay: bool,
}

pub fn encode_params(params: &ParamSet) -> Result<Vec<u8>> {
    let mut index = BTreeMap::new();
    let mut payload = Vec::new();
    for p in params.iter() {
        index.insert(
            p.name.clone(),
            Entry { offset: payload.len() as u64, dtype: DType::F64.name().into(), dims: p.value.shape().to_vec(), decay: p.decay },
        );
        payload.extend_from_slice(&encode_payload(&p.value, DType::F64));
    }
    let json = serde_json::to_vec(&index).map_err(|e| Error::Config(format!("checkpoint index: {e}")))?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamSet> {
    let fmt = |offset: usize, message: String| Error::Format { offset: offset as u64, message };
    if bytes.len() < 8 {
        return Err(fmt(bytes.len(), "checkpoint header truncated".into()));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let start = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(8))
        .filter(|&s| s <= bytes.len())
        .ok_or_else(|| fmt(0, format!("index length {len} exceeds file size")))?;
    let index: BTreeMap<String, Entry> =
        serde_json::from_slice(&bytes[8..start]).map_err(|e| fmt(8, format!("bad checkpoint index: {e}")))?;
    let mut entries: Vec<(String, Entry)> = index.into_iter().collect();
    entries.sort_by_key(|(_, e)| e.offset);
    let payload = &bytes[start..];
    let mut params = ParamSet::new();
    for (name, e) in entries {
        let dtype = DType::from_name(&e.dtype).ok_or_else(|| fmt(8, format!("{name}: unknown dtype {}", e.dtype)))?;
        if e.dims.is_empty() || e.dims.contains(&0) {
            return Err(fmt(8, format!("{name}: invalid dims {:?}", e.dims)));
        }
        let count = e.dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| fmt(8, format!("{name}: shape overflows")))?;
        let off = usize::try_from(e.offset).ok().filter(|&o| o <= payload.len()).ok_or_else(|| {
            fmt(start, format!("{name}: offset {} beyond payload", e.offset))
        })?;
        let data = decode_payload(&payload[off..], dtype, count, start + off)?;
        if params.find(&name).is_some() {
            return Err(fmt(8, format!("duplicate parameter {name}")));
        }
        params.add(name, Tensor::new(&e.dims, data)?, e.decay);
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &ParamSet) -> Result<()> {
    fs::write(path, encode_params(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_order_and_flags() {
        let mut p = ParamSet::new();
        p.add("z.w", Tensor::from_fn(&[2, 3], |i| i as f64 * 1.5 - 2.0), true);
        p.add("a.b", Tensor::vector(vec![0.1, -0.2]), false);
        let back = decode_params(&encode_params(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_truncation() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::zeros(&[4, 4]), true);
        let bytes = encode_params(&p).unwrap();
        assert!(matches!(decode_params(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        assert!(matches!(decode_params(&bytes[..5]), Err(Error::Format { .. })));
    }
}
