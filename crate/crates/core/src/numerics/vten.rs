//! VTEN tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "VTEN" (56 54 45 4E)
//! 4       1           version = 1
//! 5       1           dtype (0 = f32, 1 = f64)
//! 6       1           rank
//! 7       1           reserved = 0
//! 8       8 * rank    extents as u64
//! ..      n * size    row-major payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::{DType, Scalar};

pub const MAGIC: [u8; 4] = *b"VTEN";
pub const VERSION: u8 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank()).map_err(|_| format_err("rank exceeds 255"))?;
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + t.len() * T::DTYPE.size());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(rank);
    out.push(0);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

/// Parsed header: dtype and extents, plus the payload offset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub payload_offset: usize,
}

pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 8 {
        return Err(format_err("truncated header"));
    }
    if bytes[..4] != MAGIC {
        return Err(format_err("bad magic, not a VTEN file"));
    }
    if bytes[4] != VERSION {
        return Err(format_err(format!("unsupported VTEN version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5])
        .ok_or_else(|| format_err(format!("unknown dtype code {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    if bytes[7] != 0 {
        return Err(format_err("reserved header byte must be zero"));
    }
    if rank == 0 {
        return Err(format_err("rank must be at least 1"));
    }
    let payload_offset = 8 + 8 * rank;
    if bytes.len() < payload_offset {
        return Err(format_err("truncated extents"));
    }
    let dims = (0..rank)
        .map(|i| {
            let raw = u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
            usize::try_from(raw).map_err(|_| format_err("extent overflows usize"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Header {
        dtype,
        dims,
        payload_offset,
    })
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let header = read_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(format_err(format!(
            "file holds {} but {} was requested",
            header.dtype,
            T::DTYPE
        )));
    }
    let n = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err("element count overflows"))?;
    let size = T::DTYPE.size();
    let payload = &bytes[header.payload_offset..];
    if payload.len() != n * size {
        return Err(format_err(format!(
            "payload is {} bytes, extents {:?} need {}",
            payload.len(),
            header.dims,
            n * size
        )));
    }
    let data = payload.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(header.dims, data)
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(t)?)?;
    Ok(())
}

pub fn read<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode(&fs::read(path)?)
}

/// Reads a file of either dtype, widening to f64.
pub fn read_any_f64(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let bytes = fs::read(path)?;
    match read_header(&bytes)?.dtype {
        DType::F64 => decode::<f64>(&bytes),
        DType::F32 => Ok(decode::<f32>(&bytes)?.cast()),
    }
}
