//! Volume container: `YAWVOL01`, u32 LE header length, JSON header, then
//! f32 LE voxels in C order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"YAWVOL01";
const DTYPE: &str = "f32le";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
}

/// Serializes `v` to the container format. Voxels are stored as 32-bit
/// floats; values that are not exactly representable are rounded.
pub fn encode_volume(v: &Volume) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(v.len() * 4);
    for (i, &x) in v.data().iter().enumerate() {
        let f = x as f32;
        if !f.is_finite() {
            return Err(Error::Validation(format!(
                "voxel {i} is not finite in 32-bit storage ({x})"
            )));
        }
        payload.extend_from_slice(&f.to_le_bytes());
    }
    let header = serde_json::to_vec(&Header {
        dims: v.dims(),
        spacing_mm: v.spacing_mm(),
        dtype: DTYPE.to_string(),
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            std::str::from_utf8(MAGIC).unwrap()
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype '{}'", header.dtype)));
    }
    if header.dims.contains(&0) {
        return Err(Error::Format(format!("header dims {:?} must be positive", header.dims)));
    }
    let n: usize = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("header dims overflow".into()))?;
    let payload = &bytes[header_end..];
    if payload.len() != n * 4 {
        return Err(Error::Format(format!(
            "payload has {} bytes, header dims {:?} require {}",
            payload.len(),
            header.dims,
            n * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Volume::new(header.dims, header.spacing_mm, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(v)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a volume exactly as stored. No standardization is applied.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}
