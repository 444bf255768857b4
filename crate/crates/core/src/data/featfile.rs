//! Little-endian tensor files: `GEAN0001` | dtype u8 | ndim u8 | dims u32… | payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use gean_tensor::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GEAN0001";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

/// Raw payload bytes of `t` in `dtype`.
pub fn encode_payload(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.len() * dtype.width());
    for &v in t.data() {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Decode `count` scalars starting at `offset` (used for error positions only).
pub fn decode_payload(bytes: &[u8], dtype: DType, count: usize, offset: usize) -> Result<Vec<f64>> {
    let need = count
        .checked_mul(dtype.width())
        .ok_or_else(|| format_err(offset, "element count overflows"))?;
    if bytes.len() < need {
        return Err(format_err(offset + bytes.len(), format!("payload truncated: {} of {need} bytes", bytes.len())));
    }
    let data = match dtype {
        DType::F32 => bytes[..need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => bytes[..need].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok(data)
}

pub fn encode(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    if t.ndim() > u8::MAX as usize {
        return Err(Error::Config(format!("too many dimensions: {}", t.ndim())));
    }
    let mut out = Vec::with_capacity(10 + 4 * t.ndim() + t.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.push(dtype.code());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Config(format!("extent {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&encode_payload(t, dtype));
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 10 {
        return Err(format_err(bytes.len(), "header truncated"));
    }
    if &bytes[..8] != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    let dtype = DType::from_code(bytes[8]).ok_or_else(|| format_err(8, format!("unknown dtype code {}", bytes[8])))?;
    let ndim = bytes[9] as usize;
    if ndim == 0 {
        return Err(format_err(9, "zero-dimensional tensor"));
    }
    let dims_end = 10 + 4 * ndim;
    if bytes.len() < dims_end {
        return Err(format_err(bytes.len(), "dimension list truncated"));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for k in 0..ndim {
        let at = 10 + 4 * k;
        let d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(format_err(at, "zero extent"));
        }
        count = count.checked_mul(d).ok_or_else(|| format_err(at, "shape overflows"))?;
        shape.push(d);
    }
    let payload = &bytes[dims_end..];
    let data = decode_payload(payload, dtype, count, dims_end)?;
    if payload.len() != count * dtype.width() {
        return Err(format_err(dims_end + count * dtype.width(), "trailing bytes after payload"));
    }
    Ok(Tensor::new(&shape, data)?)
}

pub fn write_feature_file(path: &Path, t: &Tensor, dtype: DType) -> Result<()> {
    let bytes = encode(t, dtype)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Shape from the header alone.
pub fn read_shape(path: &Path) -> Result<Vec<usize>> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 10];
    f.read_exact(&mut head).map_err(|_| format_err(0, "header truncated"))?;
    if &head[..8] != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    let ndim = head[9] as usize;
    if ndim == 0 {
        return Err(format_err(9, "zero-dimensional tensor"));
    }
    let mut dims = vec![0u8; 4 * ndim];
    f.read_exact(&mut dims).map_err(|_| format_err(10, "dimension list truncated"))?;
    Ok(dims.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bitwise() {
        let t = Tensor::from_fn(&[3, 7, 7, 16], |i| (i as f64 * 0.731).sin() * 1e3);
        assert_eq!(decode(&encode(&t, DType::F64).unwrap()).unwrap(), t);
        let small = Tensor::from_fn(&[4], |i| i as f64 * 0.5);
        assert_eq!(decode(&encode(&small, DType::F32).unwrap()).unwrap(), small);
    }

    #[test]
    fn corrupt_inputs() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f64);
        let mut bytes = encode(&t, DType::F64).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut zero_d = MAGIC.to_vec();
        zero_d.extend_from_slice(&[1, 0]);
        assert!(matches!(decode(&zero_d), Err(Error::Format { offset: 9, .. })));
        let mut huge = MAGIC.to_vec();
        huge.extend_from_slice(&[1, 3]);
        for _ in 0..3 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode(&huge), Err(Error::Format { .. })));
    }
}
