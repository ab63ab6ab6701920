//! Binary tensor records: magic `RTF1`, rank and extents as little-endian
//! `u64`, then the values as little-endian `f32`.

use super::{Elem, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RTF1";
const MAX_RANK: u64 = 8;

/// Encoded size of a tensor with the given shape.
pub fn encoded_len(shape: &[usize]) -> usize {
    4 + 8 + 8 * shape.len() + 4 * shape.iter().product::<usize>()
}

pub fn encode<T: Elem>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.reserve(encoded_len(t.shape()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

/// Decodes one record from the front of `bytes`. `base` is the absolute file
/// offset of `bytes[0]`, used in corruption reports. Returns the tensor and
/// the number of bytes consumed.
pub fn decode<T: Elem>(bytes: &[u8], base: u64) -> Result<(Tensor<T>, usize)> {
    let corrupt = |at: usize, reason: String| Error::Corrupt {
        offset: base + at as u64,
        reason,
    };
    let read_u64 = |at: usize| -> Result<u64> {
        bytes
            .get(at..at + 8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| corrupt(at, "truncated tensor header".into()))
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(corrupt(0, "missing RTF1 magic".into()));
    }
    let rank = read_u64(4)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(corrupt(4, format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut count: u64 = 1;
    for k in 0..rank as usize {
        let at = 12 + 8 * k;
        let d = read_u64(at)?;
        count = count
            .checked_mul(d)
            .filter(|&c| d > 0 && c <= (bytes.len() as u64) / 4)
            .ok_or_else(|| corrupt(at, format!("extent {d} exceeds remaining data")))?;
        shape.push(d as usize);
    }
    let start = 12 + 8 * rank as usize;
    let end = start + 4 * count as usize;
    let payload = bytes
        .get(start..end)
        .ok_or_else(|| corrupt(start, format!("truncated payload: need {} bytes", end - start)))?;
    let data = payload
        .chunks_exact(4)
        .map(|b| T::from_f64_lossy(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
        .collect();
    Ok((Tensor::from_vec(&shape, data)?, end))
}
