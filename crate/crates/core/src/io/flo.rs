use std::path::Path;

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::motion::FlowField;

/// Magic number opening every `.flo` file; its little-endian bytes spell
/// `PIEH`.
pub const FLO_MAGIC: f32 = 202021.25;

/// Encodes a flow as `.flo` bytes: magic, width and height as `i32`, then
/// row-major interleaved `(u, v)` pairs, all little-endian.
pub fn encode_flo(flow: &FlowField<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * flow.data().len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for v in flow.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField<f32>> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| b.try_into().expect("4-byte slice"))
            .ok_or_else(|| Error::format("flo", format!("truncated header ({} bytes)", bytes.len())))
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(Error::format("flo", "bad magic number"));
    }
    let (w, h) = (i32::from_le_bytes(word(1)?), i32::from_le_bytes(word(2)?));
    if w <= 0 || h <= 0 {
        return Err(Error::format("flo", format!("invalid size {w}x{h}")));
    }
    let n = (w as usize)
        .checked_mul(h as usize)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::format("flo", "size overflows"))?;
    let payload = &bytes[12..];
    if payload.len() != 4 * n {
        return Err(Error::format(
            "flo",
            format!("{w}x{h} needs {} payload bytes, found {}", 4 * n, payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    FlowField::from_vec(w as usize, h as usize, data)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField<f32>> {
    decode_flo(&read_file(path.as_ref())?)
}

pub fn write_flo(flow: &FlowField<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_flo(flow))
}
